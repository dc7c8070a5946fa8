//! The soft nearest neighbor and the cycle loss on a hand-built example.
//!
//! A query sits close to one of three neighbors. Its soft neighbor is
//! classified back against the positive key and two negatives; moving the
//! query away from the matching neighbor raises the loss.

use cyclecon::losses::{cycle_loss, soft_nearest_neighbor, LossConfig};
use cyclecon::tensor::{Tape, Tensor};

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn rows(rs: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::matrix(rs.len(), rs[0].len(), rs.concat()).unwrap()
}

fn main() -> cyclecon::Result<()> {
    let cfg = LossConfig::default();
    let neighbors = rows(&[unit(&[1.0, 0.1, 0.0]), unit(&[0.0, 1.0, 0.0]), unit(&[0.0, 0.0, 1.0])]);
    let key = rows(&[unit(&[1.0, 0.0, 0.1])]);
    let negatives = rows(&[unit(&[0.0, 1.0, 0.2]), unit(&[0.1, 0.0, 1.0])]);

    for drift in [0.0, 0.5, 1.0, 2.0] {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(rows(&[unit(&[1.0, drift, 0.0])]));
        let u = tape.constant(neighbors.clone());
        let k = tape.constant(key.clone());
        let n = tape.constant(negatives.clone());
        let soft = soft_nearest_neighbor(&mut tape, q, u, &cfg)?;
        let loss = cycle_loss(&mut tape, soft.q_hat, k, n, &cfg)?;
        let alpha = tape.value(soft.alpha);
        println!(
            "drift {drift:.1}: alpha [{}], cycle loss {:.4}",
            alpha.row(0).iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(", "),
            tape.value(loss).item()
        );
    }
    Ok(())
}
