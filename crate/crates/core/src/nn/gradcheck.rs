//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::nn::Layer;
use crate::tensor::Tensor;
use crate::Scalar;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Block relative error: `max|a - n| / max(max|a|, max|n|)`.
///
/// Normalizing by the block scale keeps near-zero entries from dominating.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

fn to_f64<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|v| v.as_f64()).collect()
}

/// Checks parameter gradients of `layer` under `loss`, which maps the layer
/// output to a scalar and its gradient. Layers without parameters yield an
/// empty report.
pub fn grad_check<T, F>(layer: &Layer<T>, input: &Tensor<T>, loss: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> (T, Tensor<T>),
{
    let out = layer.forward(input)?;
    let (_, upstream) = loss(&out);
    let (_, tape) = layer.backward(input, &upstream)?;
    let names = ["weight", "bias"];
    let mut blocks = Vec::new();
    for (bi, grad) in tape.grads.iter().enumerate() {
        let base = layer.params()[bi].data().to_vec();
        let numeric = fd_gradient(
            |p| {
                let mut probe = layer.clone();
                let dst = probe.params_mut().swap_remove(bi);
                for (d, &v) in dst.data_mut().iter_mut().zip(p) {
                    *d = T::lit(v);
                }
                match probe.forward(input) {
                    Ok(o) => loss(&o).0.as_f64(),
                    Err(_) => f64::NAN,
                }
            },
            &to_f64(&base),
            FD_STEP,
        );
        blocks.push(BlockError {
            name: format!("{}.{}", layer.kind(), names.get(bi).copied().unwrap_or("param")),
            max_rel_error: relative_error(&to_f64(grad.data()), &numeric),
        });
    }
    Ok(GradCheckReport { blocks })
}

/// Checks the input gradient of `layer` under `loss`.
pub fn grad_check_input<T, F>(layer: &Layer<T>, input: &Tensor<T>, loss: F) -> Result<BlockError>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> (T, Tensor<T>),
{
    let out = layer.forward(input)?;
    let (_, upstream) = loss(&out);
    let (dx, _) = layer.backward(input, &upstream)?;
    let numeric = fd_gradient(
        |x| {
            let probe = Tensor::new(input.shape().to_vec(), x.iter().map(|&v| T::lit(v)).collect())
                .expect("same shape");
            match layer.forward(&probe) {
                Ok(o) => loss(&o).0.as_f64(),
                Err(_) => f64::NAN,
            }
        },
        &to_f64(input.data()),
        FD_STEP,
    );
    Ok(BlockError {
        name: format!("{}.input", layer.kind()),
        max_rel_error: relative_error(&to_f64(dx.data()), &numeric),
    })
}
