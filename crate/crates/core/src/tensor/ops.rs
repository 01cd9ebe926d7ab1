use super::{ChannelVector, Result, Shape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Mul,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn pointwise(input: &Tensor, f: Pointwise) -> Tensor {
    match f {
        Pointwise::Relu => input.map(|v| v.max(0.0)),
        Pointwise::Sigmoid => input.map(sigmoid),
    }
}

pub fn binary(a: &Tensor, b: &Tensor, f: Binary) -> Result<Tensor> {
    a.expect_same_shape(b, "binary")?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| match f {
            Binary::Add => x + y,
            Binary::Mul => x * y,
        })
        .collect();
    Tensor::from_vec(a.shape(), data)
}

/// Stacks `parts` along the channel axis, in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| TensorError::ShapeMismatch {
        op: "concat_channels",
        detail: "no parts".into(),
    })?;
    let s0 = first.shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                detail: format!("{} vs {}", s0, s),
            });
        }
        channels += s.c;
    }
    let out_shape = Shape::new(s0.n, channels, s0.h, s0.w);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..s0.n {
        for p in parts {
            for c in 0..p.shape().c {
                data.extend_from_slice(p.plane(n, c));
            }
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Inverse of [`concat_channels`]: slices `input` into consecutive channel groups.
pub fn split_channels(input: &Tensor, extents: &[usize]) -> Result<Vec<Tensor>> {
    let s = input.shape();
    if extents.iter().sum::<usize>() != s.c || extents.contains(&0) {
        return Err(TensorError::ShapeMismatch {
            op: "split_channels",
            detail: format!("extents {:?} do not partition {} channels", extents, s.c),
        });
    }
    let mut out = Vec::with_capacity(extents.len());
    let mut start = 0;
    for &e in extents {
        let mut data = Vec::with_capacity(s.n * e * s.plane());
        for n in 0..s.n {
            for c in start..start + e {
                data.extend_from_slice(input.plane(n, c));
            }
        }
        out.push(Tensor::from_vec(Shape::new(s.n, e, s.h, s.w), data)?);
        start += e;
    }
    Ok(out)
}

/// Per-channel sum over the spatial extent of a single-sample tensor.
pub fn spatial_sum(input: &Tensor, layer_id: &str) -> Result<ChannelVector> {
    let s = input.shape();
    if s.n != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "spatial_sum",
            detail: format!("expected batch extent 1, got {}", s),
        });
    }
    Ok(ChannelVector {
        layer_id: layer_id.to_string(),
        values: (0..s.c).map(|c| input.plane(0, c).iter().sum()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    fn random(shape: Shape, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.numel()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn relu_and_sigmoid() {
        assert_eq!(pointwise(&t(&[-1.0, 2.0]), Pointwise::Relu).data(), &[0.0, 2.0]);
        assert_eq!(pointwise(&t(&[0.0]), Pointwise::Sigmoid).data(), &[0.5]);
        let x = random(Shape::new(1, 2, 3, 3), 1);
        let y = pointwise(&x, Pointwise::Sigmoid);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((1.0 / (1.0 + (-a).exp()) - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn add_and_mul() {
        assert_eq!(binary(&t(&[3.0]), &t(&[1.0]), Binary::Add).unwrap().data(), &[4.0]);
        assert_eq!(binary(&t(&[2.0]), &t(&[0.5]), Binary::Mul).unwrap().data(), &[1.0]);
        let (a, b) = (random(Shape::new(1, 2, 4, 3), 2), random(Shape::new(1, 2, 4, 3), 3));
        let sum = binary(&a, &b, Binary::Add).unwrap();
        let prod = binary(&a, &b, Binary::Mul).unwrap();
        for i in 0..a.len() {
            assert_eq!(sum.data()[i], a.data()[i] + b.data()[i]);
            assert_eq!(prod.data()[i], a.data()[i] * b.data()[i]);
        }
        assert!(binary(&t(&[1.0]), &t(&[1.0, 2.0]), Binary::Add).is_err());
    }

    #[test]
    fn concat_preserves_order() {
        let a = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let b = Tensor::full(Shape::new(1, 1, 2, 2), 2.0);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape().c, 2);
        assert_eq!(c.plane(0, 0), a.plane(0, 0));
        assert_eq!(c.plane(0, 1), b.plane(0, 0));
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let bad = Tensor::zeros(Shape::new(1, 1, 3, 2));
        assert!(concat_channels(&[&a, &bad]).is_err());
    }

    #[test]
    fn split_then_concat_round_trip() {
        let x = random(Shape::new(1, 6, 3, 2), 4);
        let parts = split_channels(&x, &[1, 3, 2]).unwrap();
        let refs: Vec<&Tensor> = parts.iter().collect();
        assert_eq!(concat_channels(&refs).unwrap(), x);
        assert!(split_channels(&x, &[2, 2]).is_err());
    }

    #[test]
    fn spatial_sum_cases() {
        let ones = Tensor::full(Shape::new(1, 1, 4, 4), 1.0);
        assert_eq!(spatial_sum(&ones, "l").unwrap().values, vec![16.0]);
        let zeros = Tensor::zeros(Shape::new(1, 3, 2, 2));
        assert_eq!(spatial_sum(&zeros, "l").unwrap().values, vec![0.0; 3]);
        let x = random(Shape::new(1, 4, 5, 6), 9);
        let v = spatial_sum(&x, "l").unwrap();
        for c in 0..4 {
            let mut acc = 0.0;
            for y in 0..5 {
                for xx in 0..6 {
                    acc += x.at(0, c, y, xx);
                }
            }
            assert!((acc - v.values[c]).abs() < 1e-12);
        }
        assert!(spatial_sum(&Tensor::zeros(Shape::new(2, 1, 1, 1)), "l").is_err());
    }

    proptest! {
        #[test]
        fn spatial_sum_is_additive(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let s = Shape::new(1, 3, 4, 5);
            let (a, b) = (random(s, seed_a), random(s, seed_b + 1000));
            let lhs = spatial_sum(&binary(&a, &b, Binary::Add).unwrap(), "l").unwrap();
            let (sa, sb) = (spatial_sum(&a, "l").unwrap(), spatial_sum(&b, "l").unwrap());
            for c in 0..3 {
                prop_assert!((lhs.values[c] - sa.values[c] - sb.values[c]).abs() < 1e-12);
            }
        }
    }
}
