use super::{OpKind, Tensor};
use crate::error::{Error, Result};

/// For each flat index of a tensor of shape `big`, the flat index of the
/// block it falls in when the trailing axes are divided by `factors`.
fn block_index(big: &[usize], factors: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let lead = big.len() - factors.len();
    let small: Vec<usize> = big
        .iter()
        .enumerate()
        .map(|(a, &n)| if a < lead { n } else { n / factors[a - lead] })
        .collect();
    let nd = big.len();
    let mut strides = vec![1usize; nd];
    for a in (0..nd.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * small[a + 1];
    }
    let total: usize = big.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    for _ in 0..total {
        let mut flat = 0;
        for a in 0..nd {
            let f = if a < lead { 1 } else { factors[a - lead] };
            flat += (idx[a] / f) * strides[a];
        }
        map.push(flat);
        for a in (0..nd).rev() {
            idx[a] += 1;
            if idx[a] < big[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    (small, map)
}

fn check_factors(op: &'static str, shape: &[usize], factors: &[usize], divide: bool) -> Result<()> {
    if factors.len() > shape.len() {
        return Err(Error::shape(op, format!("{} factors for shape {shape:?}", factors.len())));
    }
    let lead = shape.len() - factors.len();
    for (a, &f) in factors.iter().enumerate() {
        if f == 0 || (divide && shape[lead + a] % f != 0) {
            return Err(Error::shape(
                op,
                format!("factor {f} does not divide axis of length {}", shape[lead + a]),
            ));
        }
    }
    Ok(())
}

impl Tensor {
    /// Block-mean pooling of the trailing axes by `factors` (kernel = stride).
    /// A factor of 1 leaves that axis alone; a factor equal to the axis length
    /// averages it away to length 1.
    pub fn avg_pool(&self, factors: &[usize]) -> Result<Tensor> {
        check_factors("avg_pool", &self.shape, factors, true)?;
        let (small, map) = block_index(&self.shape, factors);
        let vol: usize = factors.iter().product();
        let inv = 1.0 / vol as f64;
        let mut data = vec![0.0; small.iter().product()];
        for (x, &j) in self.data.iter().zip(&map) {
            data[j] += x;
        }
        data.iter_mut().for_each(|v| *v *= inv);
        Tensor::from_op(OpKind::AvgPool, small, data, &[self], move |g, _| {
            vec![Some(map.iter().map(|&j| g[j] * inv).collect())]
        })
    }

    /// Nearest-neighbour upsampling of the trailing axes by `factors`.
    pub fn upsample_nearest(&self, factors: &[usize]) -> Result<Tensor> {
        check_factors("upsample_nearest", &self.shape, factors, false)?;
        let lead = self.ndim() - factors.len();
        let big: Vec<usize> = self
            .shape
            .iter()
            .enumerate()
            .map(|(a, &n)| if a < lead { n } else { n * factors[a - lead] })
            .collect();
        let (_, map) = block_index(&big, factors);
        let data = map.iter().map(|&j| self.data[j]).collect();
        let n = self.numel();
        Tensor::from_op(OpKind::UpsampleNearest, big, data, &[self], move |g, _| {
            let mut out = vec![0.0; n];
            for (gi, &j) in g.iter().zip(&map) {
                out[j] += gi;
            }
            vec![Some(out)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check;
    use proptest::prelude::*;

    #[test]
    fn pooling_ones_gives_ones() {
        let x = Tensor::ones(&[1, 1, 4, 4]);
        let y = x.avg_pool(&[2, 2]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pooling_block_mean() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(x.avg_pool(&[2, 2]).unwrap().data(), &[4.0]);
    }

    #[test]
    fn full_axis_factor_gives_column_means() {
        let x = Tensor::from_fn(&[1, 3, 4], |i| (i[1] * 4 + i[2]) as f64);
        let y = x.avg_pool(&[3, 1]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4]);
        for j in 0..4 {
            let want = (0..3).map(|r| (r * 4 + j) as f64).sum::<f64>() / 3.0;
            assert_eq!(y.data()[j], want);
        }
        assert!(x.avg_pool(&[2, 1]).is_err());
    }

    #[test]
    fn pool_gradients() {
        let x = Tensor::from_fn(&[2, 4, 6], |i| ((i[0] * 24 + i[1] * 6 + i[2]) as f64 * 0.3).sin());
        let r = grad_check(|t| t.avg_pool(&[2, 3])?.square()?.sum(), &x, 1e-6, 1e-6).unwrap();
        assert!(r.pass, "{r:?}");
        let r = grad_check(|t| t.upsample_nearest(&[2, 1])?.square()?.sum(), &x, 1e-6, 1e-6).unwrap();
        assert!(r.pass, "{r:?}");
    }

    proptest! {
        #[test]
        fn pool_then_upsample_is_a_projection(vals in proptest::collection::vec(-5.0f64..5.0, 64)) {
            let x = Tensor::new(vec![1, 8, 8], vals).unwrap();
            let p = |t: &Tensor| t.avg_pool(&[2, 4]).unwrap().upsample_nearest(&[2, 4]).unwrap();
            let once = p(&x);
            let twice = p(&once);
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
