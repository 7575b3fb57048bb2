//! 8-bit RGB <-> full-range BT.601 YCbCr (JFIF), with optional 2x chroma
//! subsampling.

use std::path::Path;

use crate::{Error, Result};

/// Row-major interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage { height, width });
        }
        let expected = height * width * 3;
        if data.len() != expected {
            return Err(Error::BufferSize {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Solid color image.
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Loads a PNG or binary PPM file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, img.into_raw())
    }

    /// Writes the image; the format follows the extension (`.png`, `.ppm`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction");
        buf.save(path.as_ref())?;
        Ok(())
    }

    pub(crate) fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction")
    }

    pub(crate) fn from_image(img: image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, img.into_raw())
    }
}

/// A single 8-bit sample grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::BufferSize {
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YuvPlanes {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
    pub chroma_downsampled: bool,
}

impl YuvPlanes {
    pub fn height(&self) -> usize {
        self.y.height
    }

    pub fn width(&self) -> usize {
        self.y.width
    }

    /// Chroma plane dimensions implied by the luma size.
    pub fn chroma_dims(height: usize, width: usize, downsampled: bool) -> (usize, usize) {
        if downsampled {
            (height.div_ceil(2), width.div_ceil(2))
        } else {
            (height, width)
        }
    }

    fn check(&self) -> Result<()> {
        let (ch, cw) = Self::chroma_dims(self.y.height, self.y.width, self.chroma_downsampled);
        if self.y.height == 0 || self.y.width == 0 {
            return Err(Error::EmptyImage {
                height: self.y.height,
                width: self.y.width,
            });
        }
        for (name, p) in [("u", &self.u), ("v", &self.v)] {
            if p.height != ch || p.width != cw || p.data.len() != ch * cw {
                return Err(Error::DimensionMismatch(format!(
                    "{name} plane is {}x{}, expected {ch}x{cw}",
                    p.height, p.width
                )));
            }
        }
        if self.y.data.len() != self.y.height * self.y.width {
            return Err(Error::DimensionMismatch("luma buffer length".into()));
        }
        Ok(())
    }
}

#[inline]
fn to_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

#[inline]
fn forward_pixel(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
    let cr = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
    (y, cb, cr)
}

#[inline]
fn inverse_pixel(y: f64, cb: f64, cr: f64) -> [u8; 3] {
    let cb = cb - 128.0;
    let cr = cr - 128.0;
    [
        to_u8(y + 1.402 * cr),
        to_u8(y - 0.344_136 * cb - 0.714_136 * cr),
        to_u8(y + 1.772 * cb),
    ]
}

pub fn rgb_to_yuv(img: &RgbImage, downsample: bool) -> Result<YuvPlanes> {
    let (h, w) = (img.height, img.width);
    if h == 0 || w == 0 {
        return Err(Error::EmptyImage {
            height: h,
            width: w,
        });
    }
    let n = h * w;
    let mut y = Vec::with_capacity(n);
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    for px in img.data.chunks_exact(3) {
        let (l, u, v) = forward_pixel(px[0] as f64, px[1] as f64, px[2] as f64);
        y.push(to_u8(l));
        cb.push(u);
        cr.push(v);
    }
    let (u, v) = if downsample {
        (box_downsample(&cb, h, w), box_downsample(&cr, h, w))
    } else {
        (
            Plane::new(h, w, cb.into_iter().map(to_u8).collect())?,
            Plane::new(h, w, cr.into_iter().map(to_u8).collect())?,
        )
    };
    Ok(YuvPlanes {
        y: Plane::new(h, w, y)?,
        u,
        v,
        chroma_downsampled: downsample,
    })
}

/// 2x2 box average; edge cells of odd-sized inputs average the samples present.
fn box_downsample(src: &[f64], h: usize, w: usize) -> Plane {
    let (dh, dw) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(dh * dw);
    for dy in 0..dh {
        for dx in 0..dw {
            let mut sum = 0.0;
            let mut count = 0.0;
            for y in (2 * dy)..(2 * dy + 2).min(h) {
                for x in (2 * dx)..(2 * dx + 2).min(w) {
                    sum += src[y * w + x];
                    count += 1.0;
                }
            }
            out.push(to_u8(sum / count));
        }
    }
    Plane {
        height: dh,
        width: dw,
        data: out,
    }
}

pub fn yuv_to_rgb(planes: &YuvPlanes) -> Result<RgbImage> {
    planes.check()?;
    let (h, w) = (planes.height(), planes.width());
    let mut data = Vec::with_capacity(h * w * 3);
    for yy in 0..h {
        for xx in 0..w {
            let (cy, cx) = if planes.chroma_downsampled {
                (yy / 2, xx / 2)
            } else {
                (yy, xx)
            };
            let px = inverse_pixel(
                planes.y.get(yy, xx) as f64,
                planes.u.get(cy, cx) as f64,
                planes.v.get(cy, cx) as f64,
            );
            data.extend_from_slice(&px);
        }
    }
    RgbImage::new(h, w, data)
}
