//! Reverse-mode autodiff on a tiny expression, checked against central
//! finite differences.
//!
//! Run with: cargo run --example autodiff_basics

use rdcnet::tensor::ops::{add, exp, leaky_relu, mul, sum_all};
use rdcnet::tensor::Tensor;

fn f(x: &Tensor<f64>, y: &Tensor<f64>) -> Tensor<f64> {
    // sum(exp(leaky_relu(x * y + x)))
    let xy = mul(x, y).unwrap();
    let s = add(&xy, x).unwrap();
    sum_all(&exp(&leaky_relu(&s, 0.01)))
}

fn main() {
    let x = Tensor::from_vec(vec![4], vec![0.3, -0.7, 1.1, 0.05]).tracked();
    let y = Tensor::from_vec(vec![4], vec![-1.2, 0.4, 0.9, 2.0]).tracked();

    let out = f(&x, &y);
    out.backward().unwrap();
    let gx = x.grad();

    println!("f(x, y) = {:.6}", out.item());
    println!("{:>4}  {:>14}  {:>14}  {:>10}", "i", "analytic", "numeric", "rel err");
    let h = 1e-6;
    for i in 0..4 {
        let mut up = x.data().to_vec();
        up[i] += h;
        let mut down = x.data().to_vec();
        down[i] -= h;
        let numeric = (f(&Tensor::from_vec(vec![4], up), &y).item()
            - f(&Tensor::from_vec(vec![4], down), &y).item())
            / (2.0 * h);
        let rel = (gx[i] - numeric).abs() / gx[i].abs().max(1e-12);
        println!("{i:>4}  {:>14.9}  {numeric:>14.9}  {rel:>10.2e}", gx[i]);
        assert!(rel < 1e-6);
    }
    println!("analytic gradients match finite differences");
}
