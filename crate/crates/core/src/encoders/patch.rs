use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Flat source index of every patch element, for a `[h, w]` plane cut into
/// `ph × pw` patches. Patches are ordered row-major (top-left first) and each
/// patch is flattened row-major.
pub fn patch_index(h: usize, w: usize, ph: usize, pw: usize) -> Result<Vec<usize>> {
    if ph == 0 || pw == 0 || !h.is_multiple_of(ph) || !w.is_multiple_of(pw) {
        return Err(Error::Config(format!(
            "{h}x{w} plane not divisible into {ph}x{pw} patches"
        )));
    }
    let mut idx = Vec::with_capacity(h * w);
    for pr in 0..h / ph {
        for pc in 0..w / pw {
            for r in 0..ph {
                for c in 0..pw {
                    idx.push((pr * ph + r) * w + pc * pw + c);
                }
            }
        }
    }
    Ok(idx)
}

/// `[h, w] → [(h/ph)·(w/pw), ph·pw]`.
pub fn patchify(image: &Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let [h, w] = image.dims2("patchify")?;
    let idx = patch_index(h, w, ph, pw)?;
    let d = image.data();
    Tensor::new(
        vec![(h / ph) * (w / pw), ph * pw],
        idx.iter().map(|&i| d[i]).collect(),
    )
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, h: usize, w: usize, ph: usize, pw: usize) -> Result<Tensor> {
    let idx = patch_index(h, w, ph, pw)?;
    if patches.shape() != [(h / ph) * (w / pw), ph * pw] {
        return Err(Error::shape(
            "unpatchify",
            patches.shape(),
            &[(h / ph) * (w / pw), ph * pw],
        ));
    }
    let mut out = vec![0f32; h * w];
    for (&dst, &v) in idx.iter().zip(patches.data()) {
        out[dst] = v;
    }
    Tensor::new(vec![h, w], out)
}
