use super::{AutodiffError, Graph, Tensor, Var};

/// Compare the reverse-mode gradient of a scalar function with central
/// finite differences.
///
/// `f` builds the function on a fresh graph from leaves holding `point`.
/// Returns the maximum over all coordinates of
/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, point: &[Tensor], epsilon: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(AutodiffError::BadEpsilon(epsilon));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.numel() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: v.shape().to_vec(),
            });
        }
        let x = v.item();
        if !x.is_finite() {
            return Err(AutodiffError::NonFinite(format!("f = {x}")));
        }
        Ok(x)
    };

    let mut g = Graph::new();
    let leaves: Vec<Var> = point.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &leaves)?;
    let grads = g.backward(out, &leaves, false)?;
    let analytic: Vec<Tensor> = leaves
        .iter()
        .map(|&v| g.value(grads.get(v).expect("every leaf requested")).clone())
        .collect();

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = point.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        if !grad.is_finite() {
            return Err(AutodiffError::NonFinite(format!("analytic gradient of input {t}")));
        }
        for i in 0..point[t].numel() {
            let base = point[t].data()[i];
            let mut bumped = point[t].data().to_vec();
            bumped[i] = base + epsilon;
            probe[t] = Tensor::new(point[t].shape().to_vec(), bumped.clone())?;
            let up = eval(&probe)?;
            bumped[i] = base - epsilon;
            probe[t] = Tensor::new(point[t].shape().to_vec(), bumped)?;
            let down = eval(&probe)?;
            probe[t] = point[t].clone();
            let numeric = (up - down) / (2.0 * epsilon);
            let a = grad.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.5, 0.7]);
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn constant_function_is_exact() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(4.0))),
            &[x],
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_out_of_range_epsilon() {
        let x = Tensor::scalar(1.0);
        let r = grad_check(|g, v| Ok(g.exp(v[0])), &[x], 0.1);
        assert!(matches!(r, Err(AutodiffError::BadEpsilon(_))));
    }

    #[test]
    fn non_finite_is_an_error() {
        let x = Tensor::scalar(800.0);
        let r = grad_check(|g, v| Ok(g.exp(v[0])), &[x], 1e-4);
        assert!(matches!(r, Err(AutodiffError::NonFinite(_))));
    }
}
