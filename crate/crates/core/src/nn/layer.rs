use serde::{Deserialize, Serialize};

/// Operator kind of a layer, without its sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    MaxPool2d,
    AvgPool2d,
    Flatten,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::AvgPool2d => "avgpool2d",
            LayerKind::Flatten => "flatten",
        }
    }

    /// Operators built on a `max`, the ones a sponge attack can switch on.
    pub fn is_max_based(self) -> bool {
        matches!(self, LayerKind::Relu | LayerKind::MaxPool2d)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            LayerKind::Dense => 0,
            LayerKind::Conv2d => 1,
            LayerKind::Relu => 2,
            LayerKind::MaxPool2d => 3,
            LayerKind::AvgPool2d => 4,
            LayerKind::Flatten => 5,
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One layer of a sequential network.
///
/// Convolutions and pools operate on `[channels, height, width]` samples
/// without padding; dense layers expect flat `[features]` samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d { size: usize, stride: usize },
    #[serde(rename = "avgpool2d")]
    AvgPool2d { size: usize, stride: usize },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Conv2d { .. } => LayerKind::Conv2d,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::MaxPool2d { .. } => LayerKind::MaxPool2d,
            LayerSpec::AvgPool2d { .. } => LayerKind::AvgPool2d,
            LayerSpec::Flatten => LayerKind::Flatten,
        }
    }

    /// (weight count, bias count).
    pub fn param_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { inputs, outputs } => (inputs * outputs, outputs),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            _ => (0, 0),
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    /// Per-sample output shape, or a description of why `input` is not accepted.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err("dense sizes must be positive".into());
                }
                if input != [inputs] {
                    return Err(format!("dense expects input [{inputs}], got {input:?}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err("conv2d sizes must be positive".into());
                }
                match input {
                    [c, h, w] if *c == in_channels && *h >= kernel && *w >= kernel => Ok(vec![
                        out_channels,
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                    ]),
                    _ => Err(format!(
                        "conv2d expects [{in_channels}, h>={kernel}, w>={kernel}], got {input:?}"
                    )),
                }
            }
            LayerSpec::MaxPool2d { size, stride } | LayerSpec::AvgPool2d { size, stride } => {
                if size == 0 || stride == 0 {
                    return Err("pool sizes must be positive".into());
                }
                match input {
                    [c, h, w] if *h >= size && *w >= size => {
                        Ok(vec![*c, (h - size) / stride + 1, (w - size) / stride + 1])
                    }
                    _ => Err(format!(
                        "pool expects [c, h>={size}, w>={size}], got {input:?}"
                    )),
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Geometry of a 2-D sliding window over `[c, h, w]` inputs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub size: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn new(input: &[usize], size: usize, stride: usize) -> Self {
        let (c, h, w) = (input[0], input[1], input[2]);
        Window {
            channels: c,
            height: h,
            width: w,
            size,
            stride,
            out_h: (h - size) / stride + 1,
            out_w: (w - size) / stride + 1,
        }
    }

    pub fn in_plane(&self) -> usize {
        self.height * self.width
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

// ---- kernels -------------------------------------------------------------
//
// All kernels operate on a single sample; the network loops over the batch.

pub(crate) fn dense_forward(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n..(o + 1) * n];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *y = acc + b[o];
    }
}

pub(crate) fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        if g == 0.0 {
            continue;
        }
        for (dwi, xi) in dw[o * n..(o + 1) * n].iter_mut().zip(x) {
            *dwi += g * xi;
        }
    }
    if let Some(dx) = dx {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (dxi, wi) in dx.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                *dxi += g * wi;
            }
        }
    }
}

pub(crate) fn conv_forward(x: &[f64], win: &Window, out_ch: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let k = win.size;
    let plane = win.out_plane();
    for o in 0..out_ch {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..win.channels {
            let src = &x[c * win.in_plane()..(c + 1) * win.in_plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((o * win.channels + c) * k + ky) * k + kx];
                    for oy in 0..win.out_h {
                        let row = (oy * win.stride + ky) * win.width + kx;
                        let d = &mut dst[oy * win.out_w..(oy + 1) * win.out_w];
                        for (ox, dv) in d.iter_mut().enumerate() {
                            *dv += wv * src[row + ox * win.stride];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    win: &Window,
    out_ch: usize,
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let k = win.size;
    let plane = win.out_plane();
    for o in 0..out_ch {
        let g = &dy[o * plane..(o + 1) * plane];
        db[o] += g.iter().sum::<f64>();
        for c in 0..win.channels {
            let base = c * win.in_plane();
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((o * win.channels + c) * k + ky) * k + kx;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for oy in 0..win.out_h {
                        let row = base + (oy * win.stride + ky) * win.width + kx;
                        let gr = &g[oy * win.out_w..(oy + 1) * win.out_w];
                        for (ox, gv) in gr.iter().enumerate() {
                            acc += gv * x[row + ox * win.stride];
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            for (ox, gv) in gr.iter().enumerate() {
                                dx[row + ox * win.stride] += gv * wv;
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
}

/// Index (within the sample) of the first maximal element of each window.
pub(crate) fn maxpool_argmax(x: &[f64], win: &Window) -> Vec<usize> {
    let mut idx = Vec::with_capacity(win.channels * win.out_plane());
    for c in 0..win.channels {
        let base = c * win.in_plane();
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let mut best = base + oy * win.stride * win.width + ox * win.stride;
                for ky in 0..win.size {
                    for kx in 0..win.size {
                        let i = base + (oy * win.stride + ky) * win.width + ox * win.stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

pub(crate) fn avgpool_forward(x: &[f64], win: &Window, out: &mut [f64]) {
    let scale = 1.0 / (win.size * win.size) as f64;
    let mut o = 0;
    for c in 0..win.channels {
        let base = c * win.in_plane();
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let mut acc = 0.0;
                for ky in 0..win.size {
                    let row = base + (oy * win.stride + ky) * win.width + ox * win.stride;
                    acc += x[row..row + win.size].iter().sum::<f64>();
                }
                out[o] = acc * scale;
                o += 1;
            }
        }
    }
}

pub(crate) fn avgpool_backward(dy: &[f64], win: &Window, dx: &mut [f64]) {
    let scale = 1.0 / (win.size * win.size) as f64;
    let mut o = 0;
    for c in 0..win.channels {
        let base = c * win.in_plane();
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let g = dy[o] * scale;
                for ky in 0..win.size {
                    let row = base + (oy * win.stride + ky) * win.width + ox * win.stride;
                    dx[row..row + win.size].iter_mut().for_each(|v| *v += g);
                }
                o += 1;
            }
        }
    }
}
