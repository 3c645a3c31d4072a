use serde::{Deserialize, Serialize};

use super::heatmap::{Heatmap, HeatmapSource};
use crate::error::{invalid, mismatch, Result};
use crate::layers::{BackwardMode, Layer, Model};
use crate::scalar::Scalar;
use crate::tensor::{Feature, GeometricTensor};

fn single<T: Scalar>(model: &Model<T>, x: &GeometricTensor<T>, class: usize) -> Result<Feature<T>> {
    if x.batch() != 1 {
        return Err(invalid(format!("saliency needs a single image, got a batch of {}", x.batch())));
    }
    if x.ftype() != model.input_type() {
        return Err(mismatch("input field type differs from the model's"));
    }
    if class >= model.classes() {
        return Err(invalid(format!("class {class} out of range for {} classes", model.classes())));
    }
    Ok(x.sample(0))
}

fn one_hot<T: Scalar>(n: usize, c: usize) -> Feature<T> {
    let mut f = Feature::zeros(n, 1, 1);
    f.data[c] = T::one();
    f
}

/// Bilinear resize with half-pixel centres, which commutes with quarter
/// turns of square maps.
fn upsample(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |i: usize, n: usize, on: usize| {
        let s = ((i as f64 + 0.5) * n as f64 / on as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        let (r0, r1, fr) = coord(r, h, oh);
        for c in 0..ow {
            let (c0, c1, fc) = coord(c, w, ow);
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bot * fr);
        }
    }
    out
}

/// Grad-CAM at the model's designated layer (the final residual block for
/// ResNet-9, i.e. the last activation before global and group pooling).
/// Every channel, including each orientation channel of a field, gets its
/// own weight.
pub fn grad_cam<T: Scalar>(model: &Model<T>, x: &GeometricTensor<T>, class: usize) -> Result<Heatmap> {
    let input = single(model, x, class)?;
    let layer = model.cam_layer().ok_or_else(|| invalid("model has no grad-cam layer"))?;
    let (_, trace) = model.trace_sample(&input, Some(layer), None)?;
    let act = trace.kept.as_ref().expect("kept activation");
    let grad = model
        .backward_trace(&trace, one_hot(model.classes(), class), layer + 1, None, BackwardMode::Standard, true)
        .expect("activation gradient");
    let plane = act.plane();
    let mut cam = vec![0.0f64; plane];
    for k in 0..act.c {
        let w = grad.channel(k).iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64;
        for (m, a) in cam.iter_mut().zip(act.channel(k)) {
            *m += w * a.as_f64();
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let (h, w) = (input.h, input.w);
    Heatmap::from_raw(h, w, upsample(&cam, act.h, act.w, h, w), HeatmapSource::Gradcam)
}

/// Guided backpropagation to the input; per pixel the largest absolute
/// gradient over colour channels.
pub fn guided_backprop<T: Scalar>(model: &Model<T>, x: &GeometricTensor<T>, class: usize) -> Result<Heatmap> {
    let input = single(model, x, class)?;
    let (_, trace) = model.trace_sample(&input, None, None)?;
    let g = model
        .backward_trace(&trace, one_hot(model.classes(), class), 0, None, BackwardMode::Guided, true)
        .expect("input gradient");
    let plane = g.plane();
    let raw = (0..plane)
        .map(|p| (0..g.c).map(|c| g.data[c * plane + p].as_f64().abs()).fold(0.0, f64::max))
        .collect();
    Heatmap::from_raw(input.h, input.w, raw, HeatmapSource::GuidedBackprop)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirEntry {
    /// Position among the model's convolutions, in execution order.
    pub conv: usize,
    pub kind: String,
    pub magnitude: f64,
}

/// ℓ2 norm of every convolution's pre-normalization output for an input
/// that is 1 at the centre pixel `(H/2, W/2)` of each channel and 0
/// elsewhere.
pub fn fir_probe<T: Scalar>(model: &Model<T>, height: usize, width: usize) -> Result<Vec<FirEntry>> {
    let c = model.input_type().channels();
    let mut probe = Feature::zeros(c, height, width);
    for ch in 0..c {
        probe.data[ch * height * width + (height / 2) * width + width / 2] = T::one();
    }
    let outs = model.conv_outputs(&probe)?;
    let mut kinds = Vec::new();
    collect_conv_names(model.layers(), &mut kinds);
    Ok(outs
        .iter()
        .zip(kinds)
        .enumerate()
        .map(|(i, (o, kind))| FirEntry {
            conv: i,
            kind: kind.to_string(),
            magnitude: o.data.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt(),
        })
        .collect())
}

fn collect_conv_names<T: Scalar>(layers: &[Layer<T>], out: &mut Vec<&'static str>) {
    for l in layers {
        match l {
            Layer::Conv(_) => out.push(l.name()),
            Layer::Residual(body) => collect_conv_names(body, out),
            _ => {}
        }
    }
}
