use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Number of length-`patch_len` windows with step `stride` that fit in `len`.
pub fn patch_count(len: usize, patch_len: usize, stride: usize) -> Result<usize> {
    if patch_len == 0 || stride == 0 {
        return Err(Error::Config("patch length and stride must be positive".into()));
    }
    if patch_len > len {
        return Err(Error::Config(format!(
            "patch length {patch_len} exceeds series length {len}"
        )));
    }
    Ok((len - patch_len) / stride + 1)
}

/// Splits a 1-D series into `[N, patch_len]` windows starting at `i * stride`.
pub fn patchify(series: &Tensor, patch_len: usize, stride: usize) -> Result<Tensor> {
    if series.ndim() != 1 {
        return Err(dim_err!("patchify expects a 1-D series, got {:?}", series.shape()));
    }
    let data = series.data();
    let n = patch_count(data.len(), patch_len, stride)?;
    let mut out = Vec::with_capacity(n * patch_len);
    for i in 0..n {
        out.extend_from_slice(&data[i * stride..i * stride + patch_len]);
    }
    Tensor::new(&[n, patch_len], out)
}

/// Patch tokens for a `[B, L, F]` window batch: `[B, N, F * patch_len]`, each
/// token holding the load patch followed by each covariate's patch.
pub fn patch_tokens(x: &Tensor, patch_len: usize, stride: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(dim_err!("patch_tokens expects [B, L, F], got {s:?}"));
    }
    let (b, l, f) = (s[0], s[1], s[2]);
    let n = patch_count(l, patch_len, stride)?;
    let d = x.data();
    let mut out = Vec::with_capacity(b * n * f * patch_len);
    for bi in 0..b {
        for ni in 0..n {
            for fi in 0..f {
                for t in ni * stride..ni * stride + patch_len {
                    out.push(d[(bi * l + t) * f + fi]);
                }
            }
        }
    }
    Tensor::new(&[b, n, f * patch_len], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize) -> Tensor {
        Tensor::new(&[n], (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn non_overlapping_patches_reconstruct() {
        let s = series(16);
        let p = patchify(&s, 8, 8).unwrap();
        assert_eq!(p.shape(), &[2, 8]);
        assert_eq!(p.data(), s.data());
    }

    #[test]
    fn overlapping_patch_starts() {
        let p = patchify(&series(10), 4, 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        for i in 0..4 {
            assert_eq!(p.data()[i * 4], (2 * i) as f64);
        }
    }

    #[test]
    fn full_length_patch() {
        let s = series(7);
        let p = patchify(&s, 7, 3).unwrap();
        assert_eq!(p.shape(), &[1, 7]);
        assert_eq!(p.data(), s.data());
    }

    #[test]
    fn oversized_patch_is_config_error() {
        assert!(matches!(patchify(&series(5), 6, 1), Err(Error::Config(_))));
    }

    #[test]
    fn tokens_are_channel_major_within_patch() {
        // B=1, L=4, F=2; load = 0..4, covariate = 10..14
        let x = Tensor::new(&[1, 4, 2], vec![0.0, 10.0, 1.0, 11.0, 2.0, 12.0, 3.0, 13.0]).unwrap();
        let t = patch_tokens(&x, 2, 2).unwrap();
        assert_eq!(t.shape(), &[1, 2, 4]);
        assert_eq!(t.data(), &[0.0, 1.0, 10.0, 11.0, 2.0, 3.0, 12.0, 13.0]);
    }
}
