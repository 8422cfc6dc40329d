use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_core::{ops, Tensor};

/// Fraction of videos whose own plot ranks among the `k` plots most
/// cosine-similar to the video. Rows of `videos` and `plots` pair up; ties
/// are broken against the true plot.
pub fn recall_at_k<T: Scalar>(videos: &Tensor<T>, plots: &Tensor<T>, k: usize) -> Result<f64> {
    let (n, d) = videos.dims2()?;
    let (np, dp) = plots.dims2()?;
    if (n, d) != (np, dp) {
        return Err(Error::dim("retrieval", videos.shape(), plots.shape()));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("k must lie in 1..={n}, got {k}")));
    }
    let plot_rows: Vec<Tensor<T>> = (0..n).map(|j| Tensor::vector(plots.row(j).to_vec())).collect();
    let mut hits = 0usize;
    for i in 0..n {
        let v = Tensor::vector(videos.row(i).to_vec());
        let sims = plot_rows
            .iter()
            .map(|p| ops::cosine_similarity(&v, p))
            .collect::<Result<Vec<T>>>()?;
        let own = sims[i];
        let better = sims.iter().enumerate().filter(|&(j, &s)| j != i && s >= own).count();
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Recall at each of `ks`.
pub fn retrieval_eval<T: Scalar>(videos: &Tensor<T>, plots: &Tensor<T>, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    ks.iter().map(|&k| Ok((k, recall_at_k(videos, plots, k)?))).collect()
}
