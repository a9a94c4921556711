use super::Image;
use crate::error::{Error, Result};

/// Per-channel median filter over a `window x window` neighbourhood with edge
/// replication.
pub fn denoise(img: &Image, window: usize) -> Result<Image> {
    img.validate()?;
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::param(format!(
            "median window must be odd and >= 3, got {window}"
        )));
    }
    let r = (window / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = img.clone();
    let mut buf = Vec::with_capacity(window * window);
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                buf.clear();
                for dy in -r..=r {
                    let sy = clamp(y as isize + dy, img.height);
                    for dx in -r..=r {
                        let sx = clamp(x as isize + dx, img.width);
                        buf.push(img.get(sx, sy, c));
                    }
                }
                let mid = buf.len() / 2;
                let (_, m, _) = buf.select_nth_unstable(mid);
                out.set(x, y, c, *m);
            }
        }
    }
    Ok(out)
}
