use clap::Parser;

fn main() {
    let cli = rdcnet::cli::Cli::parse();
    if let Err(e) = rdcnet::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
