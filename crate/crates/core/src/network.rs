//! The four branch networks: `f`/`g` map audio/visual into the explicit
//! space, `psi`/`tau` into the implicit space.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::matrix::tr_mul_acc;
use crate::numerics::{mul, mul_tr, Mat};
use crate::scalar::Real;

/// Hidden widths for the audio branches.
pub const DEFAULT_AUDIO_HIDDEN: [usize; 2] = [1024, 1024];
/// Hidden widths for the visual branches.
pub const DEFAULT_VISUAL_HIDDEN: [usize; 2] = [1024, 2048];

/// Fully connected net: rectifier after every hidden layer, identity at the output.
///
/// `weights[l]` is `dims[l] x dims[l + 1]`, so a batch maps as `X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchNet<T> {
    pub weights: Vec<Mat<T>>,
    pub biases: Vec<Vec<T>>,
}

/// Activations kept by [`BranchNet::forward_cached`] for backpropagation.
#[derive(Debug, Clone)]
pub struct BranchCache<T> {
    /// Pre-activations of hidden layers.
    pub pre: Vec<Mat<T>>,
    /// Rectified hidden activations.
    pub post: Vec<Mat<T>>,
    pub output: Mat<T>,
}

/// A single scalar inside a branch: weight `(row, col)` or bias entry of `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    Weight {
        layer: usize,
        row: usize,
        col: usize,
    },
    Bias {
        layer: usize,
        col: usize,
    },
}

impl<T: Real> BranchNet<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "a branch needs input and output dims");
        Self {
            weights: dims.windows(2).map(|w| Mat::zeros(w[0], w[1])).collect(),
            biases: dims[1..].iter().map(|&d| vec![T::zero(); d]).collect(),
        }
    }

    /// Glorot-uniform weights, zero biases. Draws row-major, layer by layer.
    pub fn glorot(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut net = Self::zeros(dims);
        for w in &mut net.weights {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for x in w.as_mut_slice() {
                *x = T::lit(rng.random_range(-limit..limit));
            }
        }
        net
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.weights[0].rows()];
        dims.extend(self.weights.iter().map(Mat::cols));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().cols()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.as_slice().len())
            .sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameter tensors in storage order: weight then bias, layer by layer.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    /// Maps entry `index` of tensor `tensor` (as ordered by [`Self::tensors`]) to a [`ParamRef`].
    pub fn param_ref(&self, tensor: usize, index: usize) -> ParamRef {
        let layer = tensor / 2;
        if tensor.is_multiple_of(2) {
            let cols = self.weights[layer].cols();
            ParamRef::Weight {
                layer,
                row: index / cols,
                col: index % cols,
            }
        } else {
            ParamRef::Bias { layer, col: index }
        }
    }

    pub fn get(&self, p: ParamRef) -> T {
        match p {
            ParamRef::Weight { layer, row, col } => self.weights[layer].get(row, col),
            ParamRef::Bias { layer, col } => self.biases[layer][col],
        }
    }

    pub fn forward(&self, x: &Mat<T>) -> Result<Mat<T>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &Mat<T>) -> Result<BranchCache<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "BranchNet::forward",
                format!("{} input columns", self.input_dim()),
                x.cols(),
            ));
        }
        let last = self.num_layers() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut post: Vec<Mat<T>> = Vec::with_capacity(last);
        for l in 0..last {
            let input = if l == 0 { x } else { &post[l - 1] };
            let z = affine(input, &self.weights[l], &self.biases[l]);
            post.push(z.map(relu));
            pre.push(z);
        }
        let input = if last == 0 { x } else { &post[last - 1] };
        let output = affine(input, &self.weights[last], &self.biases[last]);
        Ok(BranchCache { pre, post, output })
    }

    /// Gradient of `sum(upstream .* output)` with respect to every parameter.
    ///
    /// The rectifier derivative at exactly zero is taken as zero.
    pub fn backward(
        &self,
        x: &Mat<T>,
        cache: &BranchCache<T>,
        upstream: &Mat<T>,
    ) -> Result<BranchNet<T>> {
        if upstream.shape() != cache.output.shape() {
            return Err(Error::shape(
                "BranchNet::backward",
                format!("{}x{} upstream", cache.output.rows(), cache.output.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let mut grad = Self::zeros(&self.layer_dims());
        if upstream.as_slice().iter().all(|v| *v == T::zero()) {
            return Ok(grad);
        }
        let mut g = upstream.clone();
        for l in (0..self.num_layers()).rev() {
            let input = if l == 0 { x } else { &cache.post[l - 1] };
            tr_mul_acc(T::one(), input, &g, &mut grad.weights[l]);
            grad.biases[l] = g.column_sums();
            if l > 0 {
                let mut next = mul_tr(&g, &self.weights[l]);
                for (d, &z) in next
                    .as_mut_slice()
                    .iter_mut()
                    .zip(cache.pre[l - 1].as_slice())
                {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                }
                g = next;
            }
        }
        Ok(grad)
    }

    /// Output after shifting parameter `p` by `delta`, reusing `cache` so only
    /// the affected downstream work is redone. The flag reports whether any
    /// hidden unit changed rectifier side.
    pub fn perturbed_output(
        &self,
        x: &Mat<T>,
        cache: &BranchCache<T>,
        p: ParamRef,
        delta: T,
    ) -> (Mat<T>, bool) {
        let (layer, col) = match p {
            ParamRef::Weight { layer, col, .. } | ParamRef::Bias { layer, col } => (layer, col),
        };
        let b = x.rows();
        let dz: Vec<T> = match p {
            ParamRef::Weight { row, .. } => {
                let input = if layer == 0 {
                    x
                } else {
                    &cache.post[layer - 1]
                };
                (0..b).map(|r| delta * input.get(r, row)).collect()
            }
            ParamRef::Bias { .. } => vec![delta; b],
        };
        let last = self.num_layers() - 1;
        if layer == last {
            let mut out = cache.output.clone();
            for (r, d) in dz.iter().enumerate() {
                out.set(r, col, out.get(r, col) + *d);
            }
            return (out, false);
        }

        let mut crossed = false;
        let z = &cache.pre[layer];
        let da: Vec<T> = (0..b)
            .map(|r| {
                let old = z.get(r, col);
                let new = old + dz[r];
                crossed |= (old > T::zero()) != (new > T::zero());
                relu(new) - cache.post[layer].get(r, col)
            })
            .collect();

        // Rank-one update of the next pre-activation.
        let w_next = &self.weights[layer + 1];
        let next_z = if layer + 1 == last {
            &cache.output
        } else {
            &cache.pre[layer + 1]
        };
        let mut z_next = next_z.clone();
        for (r, &d) in da.iter().enumerate() {
            if d != T::zero() {
                for (out, &w) in z_next.row_mut(r).iter_mut().zip(w_next.row(col)) {
                    *out += d * w;
                }
            }
        }
        if layer + 1 == last {
            return (z_next, crossed);
        }

        let mut a = z_next.map(relu);
        crossed |= z_next
            .as_slice()
            .iter()
            .zip(next_z.as_slice())
            .any(|(&new, &old)| (new > T::zero()) != (old > T::zero()));
        for l in (layer + 2)..=last {
            let z = affine(&a, &self.weights[l], &self.biases[l]);
            if l == last {
                return (z, crossed);
            }
            crossed |= z
                .as_slice()
                .iter()
                .zip(cache.pre[l].as_slice())
                .any(|(&new, &old)| (new > T::zero()) != (old > T::zero()));
            a = z.map(relu);
        }
        unreachable!("loop returns at the output layer")
    }

    pub fn cast<U: Real>(&self) -> BranchNet<U> {
        BranchNet {
            weights: self.weights.iter().map(Mat::cast).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                        .collect()
                })
                .collect(),
        }
    }
}

#[inline]
fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

fn affine<T: Real>(x: &Mat<T>, w: &Mat<T>, b: &[T]) -> Mat<T> {
    let mut z = mul(x, w);
    for r in 0..z.rows() {
        for (v, &bias) in z.row_mut(r).iter_mut().zip(b) {
            *v += bias;
        }
    }
    z
}

/// Identifies one of the four branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    ExplicitAudio,
    ExplicitVisual,
    ImplicitAudio,
    ImplicitVisual,
}

impl Branch {
    pub const ALL: [Branch; 4] = [
        Branch::ExplicitAudio,
        Branch::ExplicitVisual,
        Branch::ImplicitAudio,
        Branch::ImplicitVisual,
    ];

    pub fn is_audio(self) -> bool {
        matches!(self, Branch::ExplicitAudio | Branch::ImplicitAudio)
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::ExplicitAudio => "f_ex_audio",
            Branch::ExplicitVisual => "g_ex_visual",
            Branch::ImplicitAudio => "psi_im_audio",
            Branch::ImplicitVisual => "tau_im_visual",
        }
    }
}

/// Weights of all four branches. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub f_ex_audio: BranchNet<T>,
    pub g_ex_visual: BranchNet<T>,
    pub psi_im_audio: BranchNet<T>,
    pub tau_im_visual: BranchNet<T>,
    pub k: usize,
    /// Hidden layers of the explicit and implicit branch of each modality are tied.
    pub share_ex_im: bool,
}

/// Parameter gradients, shaped like [`ModelParams`].
pub type ModelGrads<T> = ModelParams<T>;

/// Per-batch outputs of the four branches, each `batch x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceOutputs<T> {
    pub s_ex_a: Mat<T>,
    pub s_ex_v: Mat<T>,
    pub s_im_a: Mat<T>,
    pub s_im_v: Mat<T>,
}

impl<T: Real> SubspaceOutputs<T> {
    pub fn zeros(b: usize, k: usize) -> Self {
        Self {
            s_ex_a: Mat::zeros(b, k),
            s_ex_v: Mat::zeros(b, k),
            s_im_a: Mat::zeros(b, k),
            s_im_v: Mat::zeros(b, k),
        }
    }

    pub fn get(&self, branch: Branch) -> &Mat<T> {
        match branch {
            Branch::ExplicitAudio => &self.s_ex_a,
            Branch::ExplicitVisual => &self.s_ex_v,
            Branch::ImplicitAudio => &self.s_im_a,
            Branch::ImplicitVisual => &self.s_im_v,
        }
    }

    pub fn get_mut(&mut self, branch: Branch) -> &mut Mat<T> {
        match branch {
            Branch::ExplicitAudio => &mut self.s_ex_a,
            Branch::ExplicitVisual => &mut self.s_ex_v,
            Branch::ImplicitAudio => &mut self.s_im_a,
            Branch::ImplicitVisual => &mut self.s_im_v,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.s_ex_a.rows()
    }

    pub fn is_finite(&self) -> bool {
        Branch::ALL.iter().all(|&b| self.get(b).is_finite())
    }
}

/// Cached activations of all four branches for one batch.
#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    pub ex_a: BranchCache<T>,
    pub ex_v: BranchCache<T>,
    pub im_a: BranchCache<T>,
    pub im_v: BranchCache<T>,
}

impl<T: Real> ModelCache<T> {
    pub fn get(&self, branch: Branch) -> &BranchCache<T> {
        match branch {
            Branch::ExplicitAudio => &self.ex_a,
            Branch::ExplicitVisual => &self.ex_v,
            Branch::ImplicitAudio => &self.im_a,
            Branch::ImplicitVisual => &self.im_v,
        }
    }

    pub fn outputs(&self) -> SubspaceOutputs<T> {
        SubspaceOutputs {
            s_ex_a: self.ex_a.output.clone(),
            s_ex_v: self.ex_v.output.clone(),
            s_im_a: self.im_a.output.clone(),
            s_im_v: self.im_v.output.clone(),
        }
    }
}

impl<T: Real> ModelParams<T> {
    /// Glorot-initialized model. Audio branches get `audio_hidden` widths and
    /// visual branches `visual_hidden`; every branch ends in `k` outputs.
    pub fn init(
        seed: u64,
        d_a: usize,
        d_v: usize,
        k: usize,
        audio_hidden: &[usize],
        visual_hidden: &[usize],
    ) -> Result<Self> {
        if k == 0 || d_a == 0 || d_v == 0 {
            return Err(Error::InvalidConfig(
                "input dims and k must be at least 1".into(),
            ));
        }
        if audio_hidden.contains(&0) || visual_hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden widths must be at least 1".into(),
            ));
        }
        let audio_dims = [&[d_a][..], audio_hidden, &[k]].concat();
        let visual_dims = [&[d_v][..], visual_hidden, &[k]].concat();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            f_ex_audio: BranchNet::glorot(&audio_dims, &mut rng),
            g_ex_visual: BranchNet::glorot(&visual_dims, &mut rng),
            psi_im_audio: BranchNet::glorot(&audio_dims, &mut rng),
            tau_im_visual: BranchNet::glorot(&visual_dims, &mut rng),
            k,
            share_ex_im: false,
        })
    }

    /// Ties the hidden layers of each modality's implicit branch to its
    /// explicit branch (copying the explicit weights).
    pub fn tie_hidden_layers(mut self) -> Self {
        let hidden = self.f_ex_audio.num_layers() - 1;
        for l in 0..hidden {
            self.psi_im_audio.weights[l] = self.f_ex_audio.weights[l].clone();
            self.psi_im_audio.biases[l] = self.f_ex_audio.biases[l].clone();
        }
        let hidden = self.g_ex_visual.num_layers() - 1;
        for l in 0..hidden {
            self.tau_im_visual.weights[l] = self.g_ex_visual.weights[l].clone();
            self.tau_im_visual.biases[l] = self.g_ex_visual.biases[l].clone();
        }
        self.share_ex_im = true;
        self
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            f_ex_audio: BranchNet::zeros(&self.f_ex_audio.layer_dims()),
            g_ex_visual: BranchNet::zeros(&self.g_ex_visual.layer_dims()),
            psi_im_audio: BranchNet::zeros(&self.psi_im_audio.layer_dims()),
            tau_im_visual: BranchNet::zeros(&self.tau_im_visual.layer_dims()),
            k: self.k,
            share_ex_im: self.share_ex_im,
        }
    }

    pub fn d_audio(&self) -> usize {
        self.f_ex_audio.input_dim()
    }

    pub fn d_visual(&self) -> usize {
        self.g_ex_visual.input_dim()
    }

    pub fn audio_hidden(&self) -> Vec<usize> {
        let d = self.f_ex_audio.layer_dims();
        d[1..d.len() - 1].to_vec()
    }

    pub fn visual_hidden(&self) -> Vec<usize> {
        let d = self.g_ex_visual.layer_dims();
        d[1..d.len() - 1].to_vec()
    }

    pub fn branch(&self, b: Branch) -> &BranchNet<T> {
        match b {
            Branch::ExplicitAudio => &self.f_ex_audio,
            Branch::ExplicitVisual => &self.g_ex_visual,
            Branch::ImplicitAudio => &self.psi_im_audio,
            Branch::ImplicitVisual => &self.tau_im_visual,
        }
    }

    pub fn branch_mut(&mut self, b: Branch) -> &mut BranchNet<T> {
        match b {
            Branch::ExplicitAudio => &mut self.f_ex_audio,
            Branch::ExplicitVisual => &mut self.g_ex_visual,
            Branch::ImplicitAudio => &mut self.psi_im_audio,
            Branch::ImplicitVisual => &mut self.tau_im_visual,
        }
    }

    /// All parameter tensors in declaration order.
    pub fn tensors(&self) -> Vec<&[T]> {
        Branch::ALL
            .iter()
            .flat_map(|&b| self.branch(b).tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let Self {
            f_ex_audio,
            g_ex_visual,
            psi_im_audio,
            tau_im_visual,
            ..
        } = self;
        let mut out = f_ex_audio.tensors_mut();
        out.extend(g_ex_visual.tensors_mut());
        out.extend(psi_im_audio.tensors_mut());
        out.extend(tau_im_visual.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        Branch::ALL
            .iter()
            .map(|&b| self.branch(b).num_params())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            f_ex_audio: self.f_ex_audio.cast(),
            g_ex_visual: self.g_ex_visual.cast(),
            psi_im_audio: self.psi_im_audio.cast(),
            tau_im_visual: self.tau_im_visual.cast(),
            k: self.k,
            share_ex_im: self.share_ex_im,
        }
    }

    fn check_inputs(&self, audio: &Mat<T>, visual: &Mat<T>) -> Result<()> {
        if audio.cols() != self.d_audio() {
            return Err(Error::shape(
                "forward",
                format!("{} audio columns", self.d_audio()),
                audio.cols(),
            ));
        }
        if visual.cols() != self.d_visual() {
            return Err(Error::shape(
                "forward",
                format!("{} visual columns", self.d_visual()),
                visual.cols(),
            ));
        }
        if audio.rows() != visual.rows() {
            return Err(Error::shape(
                "forward",
                format!("{} visual rows", audio.rows()),
                visual.rows(),
            ));
        }
        Ok(())
    }

    pub fn forward_cached(&self, audio: &Mat<T>, visual: &Mat<T>) -> Result<ModelCache<T>> {
        self.check_inputs(audio, visual)?;
        let ((ex_a, im_a), (ex_v, im_v)) = rayon::join(
            || {
                rayon::join(
                    || self.f_ex_audio.forward_cached(audio),
                    || self.psi_im_audio.forward_cached(audio),
                )
            },
            || {
                rayon::join(
                    || self.g_ex_visual.forward_cached(visual),
                    || self.tau_im_visual.forward_cached(visual),
                )
            },
        );
        Ok(ModelCache {
            ex_a: ex_a?,
            ex_v: ex_v?,
            im_a: im_a?,
            im_v: im_v?,
        })
    }

    pub fn backward(
        &self,
        audio: &Mat<T>,
        visual: &Mat<T>,
        cache: &ModelCache<T>,
        upstream: &SubspaceOutputs<T>,
    ) -> Result<ModelGrads<T>> {
        self.check_inputs(audio, visual)?;
        let ((ex_a, im_a), (ex_v, im_v)) = rayon::join(
            || {
                rayon::join(
                    || {
                        self.f_ex_audio
                            .backward(audio, &cache.ex_a, &upstream.s_ex_a)
                    },
                    || {
                        self.psi_im_audio
                            .backward(audio, &cache.im_a, &upstream.s_im_a)
                    },
                )
            },
            || {
                rayon::join(
                    || {
                        self.g_ex_visual
                            .backward(visual, &cache.ex_v, &upstream.s_ex_v)
                    },
                    || {
                        self.tau_im_visual
                            .backward(visual, &cache.im_v, &upstream.s_im_v)
                    },
                )
            },
        );
        let mut grads = ModelParams {
            f_ex_audio: ex_a?,
            g_ex_visual: ex_v?,
            psi_im_audio: im_a?,
            tau_im_visual: im_v?,
            k: self.k,
            share_ex_im: self.share_ex_im,
        };
        if self.share_ex_im {
            tie_grads(&mut grads.f_ex_audio, &mut grads.psi_im_audio);
            tie_grads(&mut grads.g_ex_visual, &mut grads.tau_im_visual);
        }
        Ok(grads)
    }
}

/// Tied hidden layers receive the sum of both branches' gradients.
fn tie_grads<T: Real>(ex: &mut BranchNet<T>, im: &mut BranchNet<T>) {
    for l in 0..ex.num_layers() - 1 {
        let sum = ex.weights[l].add(&im.weights[l]);
        ex.weights[l] = sum.clone();
        im.weights[l] = sum;
        for (a, b) in ex.biases[l].iter_mut().zip(im.biases[l].iter_mut()) {
            *a += *b;
            *b = *a;
        }
    }
}

/// Branch outputs for a batch.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    audio: &Mat<T>,
    visual: &Mat<T>,
) -> Result<SubspaceOutputs<T>> {
    Ok(params.forward_cached(audio, visual)?.outputs())
}

/// Parameter gradients of `sum_m <upstream_m, output_m>` over the four branches.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    audio: &Mat<T>,
    visual: &Mat<T>,
    upstream: &SubspaceOutputs<T>,
) -> Result<ModelGrads<T>> {
    let cache = params.forward_cached(audio, visual)?;
    params.backward(audio, visual, &cache, upstream)
}
