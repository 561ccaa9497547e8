//! Paired tests on per-conversation criterion scores.
//!
//! Run with `cargo run --example statistics`.

use grounded_observer::harness::{brown_forsythe, cohens_kappa, holm_correct, paired_t, wilcoxon_signed_rank};

fn main() {
    let base = [3.1, 2.8, 3.6, 2.9, 3.3, 3.0, 2.7, 3.4, 3.2, 2.6];
    let observer = [3.5, 3.0, 3.9, 3.4, 3.3, 3.6, 3.1, 3.8, 3.3, 3.2];

    let w = wilcoxon_signed_rank(&observer, &base).unwrap();
    let t = paired_t(&observer, &base).unwrap();
    let bf = brown_forsythe(&[observer.to_vec(), base.to_vec()]).unwrap();
    println!("wilcoxon       W = {:>6.2}  n = {}  p = {:.4}", w.w, w.n, w.p);
    println!("paired t       t = {:>6.3}  df = {}  p = {:.4}", t.t, t.df, t.p);
    println!("brown-forsythe F = {:>6.3}  p = {:.4}", bf.f, bf.p);

    let adjusted = holm_correct(&[w.p, t.p, bf.p]).unwrap();
    println!("holm-adjusted  {:.4?}", adjusted);

    let agreement = vec![vec![20, 5, 0], vec![4, 15, 3], vec![1, 2, 10]];
    println!("cohen's kappa  {:.4}", cohens_kappa(&agreement).unwrap());
}
