use rand::Rng;

use crate::error::Result;
use crate::kernels::Padding;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A square convolution whose kernel (and optional bias) live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub size: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvLayer {
    /// Same-padded stride-1 convolution with He-normal kernel and zero bias.
    pub fn same<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        size: usize,
        cin: usize,
        cout: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (size * size * cin) as f64).sqrt();
        let kernel = store.add(
            &format!("{name}.kernel"),
            Tensor::randn(&[size, size, cin, cout], std, rng),
        );
        let bias = bias.then(|| store.add(&format!("{name}.bias"), Tensor::zeros(&[cout])));
        ConvLayer {
            kernel,
            bias,
            size,
            cin,
            cout,
            stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, x: Var) -> Result<Var> {
        tape.conv2d(
            x,
            params.var(self.kernel),
            self.bias.map(|b| params.var(b)),
            self.stride,
            self.padding,
        )
    }

    /// Scales the kernel by `noise` and adds an identity on the centre tap
    /// for the first `min(cin, cout)` channels.
    pub fn init_near_identity(&self, store: &mut ParamStore, noise: f64) {
        let (k, cin, cout) = (self.size, self.cin, self.cout);
        let kernel = store.get_mut(self.kernel);
        kernel.data_mut().iter_mut().for_each(|v| *v *= noise);
        let centre = (k / 2) * k + k / 2;
        for c in 0..cin.min(cout) {
            kernel.data_mut()[(centre * cin + c) * cout + c] += 1.0;
        }
    }

    pub fn scale_kernel(&self, store: &mut ParamStore, factor: f64) {
        store
            .get_mut(self.kernel)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= factor);
    }

    /// Multiplies the centre tap by `centre` and every other tap by `rest`.
    pub fn emphasize_centre(&self, store: &mut ParamStore, centre: f64, rest: f64) {
        let k = self.size;
        let per_tap = self.cin * self.cout;
        let mid = (k / 2) * k + k / 2;
        for (tap, chunk) in store
            .get_mut(self.kernel)
            .data_mut()
            .chunks_exact_mut(per_tap)
            .enumerate()
        {
            let f = if tap == mid { centre } else { rest };
            chunk.iter_mut().for_each(|v| *v *= f);
        }
    }
}
