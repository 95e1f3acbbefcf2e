//! Reverse-mode automatic differentiation over dense tensors.
//!
//! The layer set is deliberately small: exactly what the volumetric encoders,
//! decoders, projection heads and the retrieval losses need. A [`Graph`] is a
//! tape; every op evaluates eagerly when recorded and stores what its backward
//! rule needs. Parameters live outside the graph and are inserted as leaves
//! for each step.

mod conv;
pub mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{check_gradients, grad_check, relative_error};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("invalid tensor shape {shape:?}: extents must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: zero-norm vector")]
    ZeroNorm { op: &'static str },
}

/// Default group-norm stability constant.
pub const GROUP_NORM_EPS: f64 = 1e-5;
/// Default leaky-ReLU negative slope.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Every differentiable op the graph supports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv3d,
    Conv3dTranspose,
    GroupNorm,
    LeakyRelu,
    Linear,
    MeanSquaredError,
    L2Norm,
    EuclideanDistance,
    CosineSimilarity,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Exp,
    Reshape,
    ReduceMean,
    ReduceSum,
    StopGradient,
    GaussianRbfKernel,
}

impl LayerKind {
    pub const ALL: [LayerKind; 20] = [
        LayerKind::Conv3d,
        LayerKind::Conv3dTranspose,
        LayerKind::GroupNorm,
        LayerKind::LeakyRelu,
        LayerKind::Linear,
        LayerKind::MeanSquaredError,
        LayerKind::L2Norm,
        LayerKind::EuclideanDistance,
        LayerKind::CosineSimilarity,
        LayerKind::Add,
        LayerKind::Sub,
        LayerKind::Mul,
        LayerKind::Scale,
        LayerKind::AddScalar,
        LayerKind::Exp,
        LayerKind::Reshape,
        LayerKind::ReduceMean,
        LayerKind::ReduceSum,
        LayerKind::StopGradient,
        LayerKind::GaussianRbfKernel,
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn single_voxel_convolution() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 1, 1, 1], &[2.0]));
        let w = g.param(t(&[1, 1, 1, 1, 1], &[3.0]));
        let y = g.conv3d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[6.0]);
    }

    #[test]
    fn leaky_relu_definition() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2], &[-1.0, 2.0]));
        let y = g.leaky_relu(x, 0.01);
        assert_eq!(g.value(y).data(), &[-0.01, 2.0]);
    }

    #[test]
    fn group_norm_of_constant_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 2, 2, 2, 2], 3.5));
        let gamma = g.constant(Tensor::full(&[2], 1.0));
        let beta = g.constant(Tensor::zeros(&[2]));
        let y = g.group_norm(x, gamma, beta, 1, GROUP_NORM_EPS).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_gradient_is_two_x_over_n() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1], &[2.0]));
        let zero = g.constant(t(&[1], &[0.0]));
        let l = g.mean_squared_error(x, zero).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn stop_gradient_is_identity_forward_and_blocks_backward() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[1.5, -2.0, 0.25]));
        let y = g.stop_gradient(x);
        assert_eq!(g.value(y), g.value(x));
        let l = g.reduce_sum(y);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_gradient_for_orthogonal_unit_vectors_points_along_other() {
        let mut g = Graph::<f64>::new();
        let p = g.param(t(&[1, 3], &[1.0, 0.0, 0.0]));
        let z = g.constant(t(&[1, 3], &[0.0, 0.6, 0.8]));
        let c = g.cosine_similarity(p, z).unwrap();
        let l = g.reduce_sum(c);
        let grads = g.backward(l).unwrap();
        let analytic = grads.get(p).unwrap().data().to_vec();
        for (a, e) in analytic.iter().zip([0.0, 0.6, 0.8]) {
            assert!((a - e).abs() < 1e-12);
        }
        // Independent check by central differences.
        let fd = check_gradients(&[t(&[1, 3], &[1.0, 0.0, 0.0])], |g, v| {
            let z = g.constant(t(&[1, 3], &[0.0, 0.6, 0.8]));
            let c = g.cosine_similarity(v[0], z)?;
            Ok(g.reduce_sum(c))
        })
        .unwrap();
        assert!(fd < 1e-6, "{fd}");
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarLoss { .. })));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4, 4]));
        let w = g.param(Tensor::zeros(&[3, 5, 3, 3, 3]));
        let err = g.conv3d(x, w, None, 2, 1).unwrap_err();
        assert!(err.to_string().contains("conv3d"), "{err}");
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, b), Err(AutodiffError::Shape { op: "add", .. })));
    }

    #[test]
    fn zero_norm_cosine_is_an_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[1, 3]));
        let b = g.constant(Tensor::full(&[1, 3], 1.0));
        assert!(matches!(g.cosine_similarity(a, b), Err(AutodiffError::ZeroNorm { .. })));
    }

    #[test]
    fn conv_then_transpose_restores_extents() {
        let mut g = Graph::<f32>::new();
        for dims in [[16, 16, 16], [8, 4, 6], [2, 2, 2]] {
            let x = g.constant(Tensor::zeros(&[1, 2, dims[0], dims[1], dims[2]]));
            let w = g.param(Tensor::zeros(&[4, 2, 3, 3, 3]));
            let y = g.conv3d(x, w, None, 2, 1).unwrap();
            let wt = g.param(Tensor::zeros(&[4, 2, 4, 4, 4]));
            let z = g.conv3d_transpose(y, wt, None, 2, 1).unwrap();
            assert_eq!(g.shape(z), g.shape(x));
        }
    }

    #[test]
    fn every_layer_passes_gradient_check() {
        for kind in LayerKind::ALL {
            let err = grad_check(kind, 3).unwrap();
            assert!(err <= 1e-4, "{kind:?}: {err}");
        }
    }
}
