use crate::supra::SupraHeadParams;

/// Gain and bias of a normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<P> {
    pub gain: P,
    pub bias: P,
}

/// Parameters of one residual block.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<P> {
    /// Normalization before attention; absent for `norm = none`.
    pub attn_norm: Option<Affine<P>>,
    pub heads: Vec<SupraHeadParams<P>>,
    /// Normalization before the MLP; absent for `norm = none`.
    pub mlp_norm: Option<Affine<P>>,
    /// `rC x C`.
    pub mlp_w1: P,
    pub mlp_b1: P,
    /// `C x rC`.
    pub mlp_w2: P,
    pub mlp_b2: P,
}

/// All model parameters. `P` is a tensor for storage and a tape node id
/// during a forward/backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<P> {
    /// `C x (in_channels + coordinate channels)`.
    pub lift_w: P,
    pub lift_b: P,
    pub layers: Vec<LayerParams<P>>,
    /// `out_channels x C`.
    pub head_w: P,
    pub head_b: P,
}

impl<P> Params<P> {
    /// Visit every parameter in a fixed order with its archive name, building
    /// a structurally identical set from the results.
    pub fn try_map<'a, Q, E>(
        &'a self,
        mut f: impl FnMut(&str, &'a P) -> Result<Q, E>,
    ) -> Result<Params<Q>, E> {
        let lift_w = f("lift.weight", &self.lift_w)?;
        let lift_b = f("lift.bias", &self.lift_b)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut affine = |tag: &str, a: &'a Option<Affine<P>>| -> Result<Option<Affine<Q>>, E> {
                a.as_ref()
                    .map(|a| {
                        Ok(Affine {
                            gain: f(&format!("layers.{l}.{tag}.gain"), &a.gain)?,
                            bias: f(&format!("layers.{l}.{tag}.bias"), &a.bias)?,
                        })
                    })
                    .transpose()
            };
            let attn_norm = affine("attn_norm", &layer.attn_norm)?;
            let mlp_norm = affine("mlp_norm", &layer.mlp_norm)?;
            let mut heads = Vec::with_capacity(layer.heads.len());
            for (h, head) in layer.heads.iter().enumerate() {
                heads.push(SupraHeadParams {
                    w_q: f(&format!("layers.{l}.heads.{h}.w_q"), &head.w_q)?,
                    w_k: f(&format!("layers.{l}.heads.{h}.w_k"), &head.w_k)?,
                    w_v: f(&format!("layers.{l}.heads.{h}.w_v"), &head.w_v)?,
                });
            }
            layers.push(LayerParams {
                attn_norm,
                heads,
                mlp_norm,
                mlp_w1: f(&format!("layers.{l}.mlp.w1"), &layer.mlp_w1)?,
                mlp_b1: f(&format!("layers.{l}.mlp.b1"), &layer.mlp_b1)?,
                mlp_w2: f(&format!("layers.{l}.mlp.w2"), &layer.mlp_w2)?,
                mlp_b2: f(&format!("layers.{l}.mlp.b2"), &layer.mlp_b2)?,
            });
        }
        let head_w = f("head.weight", &self.head_w)?;
        let head_b = f("head.bias", &self.head_b)?;
        Ok(Params {
            lift_w,
            lift_b,
            layers,
            head_w,
            head_b,
        })
    }

    pub fn map<'a, Q>(&'a self, mut f: impl FnMut(&'a P) -> Q) -> Params<Q> {
        match self.try_map(|_, p| Ok::<_, std::convert::Infallible>(f(p))) {
            Ok(q) => q,
            Err(never) => match never {},
        }
    }

    /// Parameters in visiting order, paired with their names.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.map_named(|name, p| out.push((name.to_string(), p)));
        out
    }

    fn map_named<'a>(&'a self, mut f: impl FnMut(&str, &'a P)) {
        let _ = self.try_map(|name, p| {
            f(name, p);
            Ok::<_, std::convert::Infallible>(())
        });
    }

    pub fn values(&self) -> Vec<&P> {
        self.named().into_iter().map(|(_, p)| p).collect()
    }

    /// Rebuild from a flat list in visiting order.
    pub fn with_values<Q>(&self, values: Vec<Q>) -> Params<Q> {
        let mut it = values.into_iter();
        let out = self.map(|_| it.next().expect("one value per parameter"));
        assert!(it.next().is_none(), "more values than parameters");
        out
    }
}
