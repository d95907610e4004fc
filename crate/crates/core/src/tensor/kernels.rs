use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Elementwise operator selector used by [`pointwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Add,
    Mul,
    Sigmoid,
    Relu,
    /// Multiply every element of sample `n` by `b[n]`, where `b` is `n x 1 x 1 x 1`.
    ScaleChannels,
}

/// Dispatches to the binary or unary kernel named by `kind`.
pub fn pointwise(kind: Pointwise, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let need_b = || b.ok_or_else(|| Error::invalid("pointwise", format!("{kind:?} needs a second operand")));
    match kind {
        Pointwise::Add => add(a, need_b()?),
        Pointwise::Mul => mul(a, need_b()?),
        Pointwise::ScaleChannels => scale_channels(a, need_b()?),
        Pointwise::Sigmoid => Ok(sigmoid(a)),
        Pointwise::Relu => Ok(relu(a)),
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("add", a, b)?;
    Ok(zip_with(a, b, |x, y| x + y))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("sub", a, b)?;
    Ok(zip_with(a, b, |x, y| x - y))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("mul", a, b)?;
    Ok(zip_with(a, b, |x, y| x * y))
}

// Largest f64 below 1 and smallest positive normal: keeps the logistic
// strictly inside (0, 1) once it saturates.
const SIGMOID_HI: f64 = 1.0 - f64::EPSILON / 2.0;
const SIGMOID_LO: f64 = f64::MIN_POSITIVE;

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_LO, SIGMOID_HI)
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(sigmoid_scalar)
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| v.max(0.0))
}

fn check_gate(op: &'static str, a: &Tensor, gate: &Tensor) -> Result<()> {
    let g = gate.shape();
    if g != Shape::new(a.shape().n, 1, 1, 1) {
        return Err(Error::shape(
            op,
            format!("gate {g} must be {}x1x1x1 for input {}", a.shape().n, a.shape()),
        ));
    }
    Ok(())
}

/// Scales each sample of `a` by its scalar gate.
pub fn scale_channels(a: &Tensor, gate: &Tensor) -> Result<Tensor> {
    check_gate("scale_channels", a, gate)?;
    let per = a.shape().c * a.shape().plane();
    let mut out = a.data().to_vec();
    for (chunk, &g) in out.chunks_mut(per).zip(gate.data()) {
        chunk.iter_mut().for_each(|v| *v *= g);
    }
    Ok(Tensor::from_parts(a.shape(), out))
}

/// Gradient of `scale_channels` with respect to the gate: per-sample dot product.
pub(crate) fn scale_channels_gate_grad(a: &Tensor, grad: &Tensor) -> Tensor {
    let per = a.shape().c * a.shape().plane();
    let data = a
        .data()
        .chunks(per)
        .zip(grad.data().chunks(per))
        .map(|(x, g)| x.iter().zip(g).map(|(p, q)| p * q).sum())
        .collect();
    Tensor::from_parts(Shape::new(a.shape().n, 1, 1, 1), data)
}

/// Concatenates along the channel axis in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?
        .shape();
    let mut channels = 0;
    for p in parts {
        if !p.shape().same_spatial(&first) {
            return Err(Error::shape(
                "concat_channels",
                format!("part {} does not share n/h/w with {}", p.shape(), first),
            ));
        }
        channels += p.shape().c;
    }
    let shape = Shape::new(first.n, channels, first.h, first.w);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..first.n {
        for p in parts {
            let per = p.shape().c * first.plane();
            data.extend_from_slice(&p.data()[n * per..(n + 1) * per]);
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Channels `start..start + len` of `a`.
pub fn slice_channels(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let s = a.shape();
    if len == 0 || start + len > s.c {
        return Err(Error::shape(
            "slice_channels",
            format!("channels {start}..{} out of range for {s}", start + len),
        ));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * len * plane);
    for n in 0..s.n {
        let base = s.index(n, start, 0, 0);
        data.extend_from_slice(&a.data()[base..base + len * plane]);
    }
    Ok(Tensor::from_parts(Shape::new(s.n, len, s.h, s.w), data))
}

/// Scatters `grad` (shaped like a channel slice) back into a zero tensor of `full`.
pub(crate) fn unslice_channels(grad: &Tensor, full: Shape, start: usize) -> Tensor {
    let plane = full.plane();
    let len = grad.shape().c;
    let mut out = vec![0.0; full.numel()];
    for n in 0..full.n {
        let dst = full.index(n, start, 0, 0);
        let src = n * len * plane;
        out[dst..dst + len * plane].copy_from_slice(&grad.data()[src..src + len * plane]);
    }
    Tensor::from_parts(full, out)
}

/// Per-channel mean over the spatial plane, accumulated in index order.
pub fn global_avg_pool(a: &Tensor) -> Tensor {
    let s = a.shape();
    let plane = s.plane();
    let inv = 1.0 / plane as f64;
    let data = a.data().chunks(plane).map(|ch| ch.iter().sum::<f64>() * inv).collect();
    Tensor::from_parts(Shape::new(s.n, s.c, 1, 1), data)
}

pub(crate) fn global_avg_pool_backward(grad: &Tensor, input: Shape) -> Tensor {
    let plane = input.plane();
    let inv = 1.0 / plane as f64;
    let mut out = Vec::with_capacity(input.numel());
    for &g in grad.data() {
        out.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::from_parts(input, out)
}

/// Sum of all elements as a `1x1x1x1` tensor.
pub fn sum_all(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data().iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let s = sigmoid(&Tensor::zeros([1, 2, 3, 3]));
        assert!(s.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn sigmoid_stays_open_interval() {
        for x in [-1000.0, -50.0, -1.0, 0.0, 1.0, 36.0, 50.0, 1000.0] {
            let s = sigmoid_scalar(x);
            assert!(s > 0.0 && s < 1.0, "sigmoid({x}) = {s}");
        }
    }

    #[test]
    fn unit_gate_is_identity() {
        let a = Tensor::from_fn([2, 3, 2, 2], |n, c, y, x| (n + c * 2 + y * 3 + x) as f64 - 3.0);
        let g = Tensor::ones([2, 1, 1, 1]);
        assert_eq!(scale_channels(&a, &g).unwrap(), a);
        assert!(scale_channels(&a, &Tensor::ones([1, 1, 1, 1])).is_err());
    }

    #[test]
    fn add_of_negation_is_zero() {
        let a = Tensor::from_fn([1, 2, 3, 3], |_, c, y, x| (c + y) as f64 * 0.7 - x as f64);
        let neg = a.map(|v| -v);
        let z = add(&a, &neg).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(add(&a, &Tensor::zeros([1, 2, 3, 2])).is_err());
    }

    #[test]
    fn relu_clips_negatives() {
        let a = Tensor::new([1, 1, 1, 4], vec![-2.0, -0.0, 0.5, 3.0]).unwrap();
        assert_eq!(relu(&a).data(), &[0.0, 0.0, 0.5, 3.0]);
    }

    #[test]
    fn concat_single_is_identity() {
        let a = Tensor::from_fn([2, 3, 2, 2], |n, c, y, x| (n * 24 + c * 4 + y * 2 + x) as f64);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_slices_round_trip() {
        let a = Tensor::from_fn([2, 32, 3, 3], |n, c, y, x| (n * 7 + c * 3 + y + x) as f64);
        let b = Tensor::from_fn([2, 1, 3, 3], |n, _, y, x| -((n + y * x) as f64));
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape().c, 33);
        assert_eq!(slice_channels(&cat, 0, 32).unwrap(), a);
        assert_eq!(slice_channels(&cat, 32, 1).unwrap(), b);
    }

    #[test]
    fn concat_layout_with_decoder_widths() {
        let d1 = Tensor::ones([1, 1, 4, 4]);
        let t = Tensor::zeros([1, 32, 4, 4]);
        let cat = concat_channels(&[&d1, &t, &t, &t, &t, &t]).unwrap();
        assert_eq!(cat.shape().c, 161);
        assert!(concat_channels(&[&d1, &Tensor::zeros([1, 32, 4, 5])]).is_err());
    }

    #[test]
    fn global_average() {
        let ones = global_avg_pool(&Tensor::ones([1, 2, 4, 4]));
        assert_eq!(ones.data(), &[1.0, 1.0]);
        let ramp = Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(global_avg_pool(&ramp).data(), &[1.5]);
    }

    #[test]
    fn pointwise_dispatch() {
        let a = Tensor::full([1, 1, 2, 2], 2.0);
        let b = Tensor::full([1, 1, 2, 2], 3.0);
        assert_eq!(pointwise(Pointwise::Mul, &a, Some(&b)).unwrap().data(), &[6.0; 4]);
        assert!(pointwise(Pointwise::Add, &a, None).is_err());
        assert_eq!(pointwise(Pointwise::Relu, &a, None).unwrap(), a);
    }
}
