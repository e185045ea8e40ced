//! Gradient verification by central finite differences.
//!
//! These checks exercise only the forward pass numerically, so they are an
//! oracle that is independent of the analytic backward implementation.

use super::{ParameterSet, Real, Tape, Tensor, Var};
use crate::error::Result;

/// Relative error between an analytic derivative and its central-difference
/// estimate: `|analytic - numeric| / (|analytic| + 1e-8)`.
fn rel_err<T: Real>(analytic: T, numeric: T) -> f64 {
    let a = analytic.as_f64();
    let n = numeric.as_f64();
    (a - n).abs() / (a.abs() + 1e-8)
}

/// Check the analytic gradient of a scalar function w.r.t. its input tensor.
///
/// `build` constructs the scalar loss from a leaf on the given tape. Returns
/// the maximum relative error over all elements of `x`. Meant to run in
/// 64-bit mode; `h = 1e-5` is a good default there.
pub fn finite_diff_check<T, F>(build: F, x: &Tensor<T>, h: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let v = tape.leaf(x.data().to_vec(), x.shape().to_vec(), true)?;
        let loss = build(&mut tape, v)?;
        tape.backward(loss)?;
        tape.grad(v).map(|g| g.to_vec()).unwrap_or_default()
    };

    let eval = |data: Vec<T>| -> Result<T> {
        let mut tape = Tape::new();
        let v = tape.leaf(data, x.shape().to_vec(), false)?;
        let loss = build(&mut tape, v)?;
        Ok(tape.value(loss))
    };

    let hh = T::from_f64(h);
    let two_h = T::from_f64(2.0 * h);
    let mut max_err = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.data().to_vec();
        plus[i] += hh;
        let mut minus = x.data().to_vec();
        minus[i] -= hh;
        let numeric = (eval(plus)? - eval(minus)?) / two_h;
        max_err = max_err.max(rel_err(analytic[i], numeric));
    }
    Ok(max_err)
}

/// Same check, but w.r.t. every tensor in a parameter set. `build` receives
/// the attached handles and must produce a scalar loss.
pub fn finite_diff_check_params<T, F>(build: F, params: &ParameterSet<T>, h: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, &super::Attached) -> Result<Var>,
{
    let (analytic, order): (Vec<Vec<T>>, Vec<String>) = {
        let mut tape = Tape::new();
        let att = params.attach(&mut tape, true);
        let loss = build(&mut tape, &att)?;
        tape.backward(loss)?;
        (
            att.grads_from(&tape),
            params.iter().map(|(n, _)| n.to_string()).collect(),
        )
    };

    let eval = |p: &ParameterSet<T>| -> Result<T> {
        let mut tape = Tape::new();
        let att = p.attach(&mut tape, false);
        let loss = build(&mut tape, &att)?;
        Ok(tape.value(loss))
    };

    let hh = T::from_f64(h);
    let two_h = T::from_f64(2.0 * h);
    let mut max_err = 0.0f64;
    for (pi, name) in order.iter().enumerate() {
        let numel = params.get(name).unwrap().numel();
        for i in 0..numel {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += hh;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= hh;
            let numeric = (eval(&plus)? - eval(&minus)?) / two_h;
            let a = if analytic[pi].is_empty() {
                T::zero()
            } else {
                analytic[pi][i]
            };
            max_err = max_err.max(rel_err(a, numeric));
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn sum_of_squares_is_exact() {
        // f = sum(x²): quadratic, central differences are exact to rounding.
        let x = Tensor::new(vec![5], vec![0.3, -1.2, 2.0, 0.0, 4.5]).unwrap();
        let err = finite_diff_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn every_op_passes_finite_differences() {
        let mut rng = RngStream::new(42, &[100]);
        let mk = |rng: &mut RngStream, n: usize| -> Tensor<f64> {
            Tensor::new(vec![n], rng.normal_vec(n, 0.8)).unwrap()
        };

        type Builder = Box<dyn Fn(&mut Tape<f64>, Var) -> crate::error::Result<Var>>;
        let other = mk(&mut rng, 12);
        let o2 = other.clone();
        let o3 = other.clone();
        let o4 = other.clone();
        let cases: Vec<(&str, usize, Builder)> = vec![
            ("add", 12, {
                let o = o2;
                Box::new(move |t, v| {
                    let c = t.constant(o.data().to_vec(), vec![12])?;
                    let y = t.add(v, c)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                })
            }),
            ("sub", 12, {
                let o = o3;
                Box::new(move |t, v| {
                    let c = t.constant(o.data().to_vec(), vec![12])?;
                    let y = t.sub(c, v)?;
                    let sq = t.mul(y, y)?;
                    Ok(t.sum(sq))
                })
            }),
            ("mul", 12, {
                let o = o4;
                Box::new(move |t, v| {
                    let c = t.constant(o.data().to_vec(), vec![12])?;
                    let y = t.mul(v, c)?;
                    Ok(t.sum(y))
                })
            }),
            ("exp", 12, Box::new(|t, v| {
                let y = t.exp(v);
                Ok(t.sum(y))
            })),
            ("tanh", 12, Box::new(|t, v| {
                let y = t.tanh(v);
                Ok(t.sum(y))
            })),
            ("sigmoid", 12, Box::new(|t, v| {
                let y = t.sigmoid(v);
                Ok(t.sum(y))
            })),
            ("leaky_relu", 12, Box::new(|t, v| {
                let y = t.leaky_relu(v, 0.2);
                let sq = t.mul(y, y)?;
                Ok(t.sum(sq))
            })),
            ("mean", 12, Box::new(|t, v| {
                let y = t.mul(v, v)?;
                Ok(t.mean(y))
            })),
            ("power_norm", 12, Box::new(|t, v| {
                let y = t.power_norm(v)?;
                let w = t.exp(y);
                Ok(t.sum(w))
            })),
        ];
        for (name, n, build) in cases {
            let x = mk(&mut rng, n);
            let err = finite_diff_check(build.as_ref(), &x, 1e-5).unwrap();
            assert!(err < 1e-4, "{name}: err = {err}");
        }
    }

    #[test]
    fn conv_net_gradients_match_finite_differences() {
        // Random 3-layer conv net, f64: max relative error < 1e-4.
        let mut rng = RngStream::new(7, &[5]);
        let mut params = ParameterSet::<f64>::new();
        let shapes: Vec<(&str, Vec<usize>)> = vec![
            ("c0.w", vec![3, 2, 3, 3]),
            ("c0.b", vec![3]),
            ("c1.w", vec![4, 3, 3, 3]),
            ("c1.b", vec![4]),
            ("c2.w", vec![2, 4, 3, 3]),
            ("c2.b", vec![2]),
        ];
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            params
                .insert(name, Tensor::new(shape, rng.normal_vec(n, 0.3)).unwrap().with_grad())
                .unwrap();
        }
        let x: Vec<f64> = rng.normal_vec(2 * 6 * 6, 1.0);
        let target: Vec<f64> = rng.normal_vec(2 * 6 * 6, 1.0);
        let err = finite_diff_check_params(
            move |t, att| {
                let xin = t.constant(x.clone(), vec![2, 6, 6])?;
                let tgt = t.constant(target.clone(), vec![2, 6, 6])?;
                let h = t.conv2d(xin, att.var("c0.w"), Some(att.var("c0.b")), 1, 1)?;
                let h = t.leaky_relu(h, 0.2);
                let h = t.conv2d(h, att.var("c1.w"), Some(att.var("c1.b")), 1, 1)?;
                let h = t.leaky_relu(h, 0.2);
                let h = t.conv2d(h, att.var("c2.w"), Some(att.var("c2.b")), 1, 1)?;
                t.mse(h, tgt)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn mse_after_conv_and_leaky_relu() {
        let mut rng = RngStream::new(11, &[9]);
        let w: Vec<f64> = rng.normal_vec(2 * 1 * 3 * 3, 0.5);
        let tgt: Vec<f64> = rng.normal_vec(2 * 4 * 4, 1.0);
        let x = Tensor::new(vec![1, 4, 4], rng.normal_vec(16, 1.0)).unwrap();
        let err = finite_diff_check(
            move |t, v| {
                let wv = t.constant(w.clone(), vec![2, 1, 3, 3])?;
                let c = t.conv2d(v, wv, None, 1, 1)?;
                let a = t.leaky_relu(c, 0.2);
                let tv = t.constant(tgt.clone(), vec![2, 4, 4])?;
                t.mse(a, tv)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }
}
