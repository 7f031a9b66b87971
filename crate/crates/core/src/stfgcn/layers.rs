use rand::Rng;

use super::ops::{attention, block_mean_assignment, coarsen, gcn_propagate};
use super::PoolGatVariant;
use crate::nn::{glorot_uniform, Linear, ParamId, ParamStore, Session};
use crate::numerics::{Result, Var};

/// `g` GCN propagations sharing one adjacency. ReLU follows every layer
/// except, optionally, the last.
#[derive(Clone, Debug)]
pub struct GcnStack {
    thetas: Vec<ParamId>,
    relu_last: bool,
}

impl GcnStack {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        layers: usize,
        relu_last: bool,
        rng: &mut R,
    ) -> Self {
        let thetas = (0..layers)
            .map(|l| {
                let fan_in = if l == 0 { d_in } else { hidden };
                store.add(format!("{name}.{l}.theta"), glorot_uniform(&[fan_in, hidden], fan_in, hidden, rng))
            })
            .collect();
        Self { thetas, relu_last }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var, a: Var) -> Result<Var> {
        let mut x = x;
        for (l, &id) in self.thetas.iter().enumerate() {
            let theta = s.param(id);
            x = gcn_propagate(s.tape, x, a, theta)?;
            if l + 1 < self.thetas.len() || self.relu_last {
                x = s.tape.relu(x)?;
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
struct Gat {
    w: ParamId,
    beta_src: ParamId,
    beta_dst: ParamId,
    slope: f64,
}

impl Gat {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, slope: f64, rng: &mut R) -> Self {
        Self {
            w: store.add(format!("{name}.w"), glorot_uniform(&[dim, dim], dim, dim, rng)),
            beta_src: store.add(format!("{name}.beta_src"), glorot_uniform(&[dim, 1], 2 * dim, 1, rng)),
            beta_dst: store.add(format!("{name}.beta_dst"), glorot_uniform(&[dim, 1], 2 * dim, 1, rng)),
            slope,
        }
    }

    fn forward(&self, s: &mut Session<'_>, x: Var, a: Var) -> Result<(Var, Var)> {
        let (w, bs, bd) = (s.param(self.w), s.param(self.beta_src), s.param(self.beta_dst));
        let h = s.tape.matmul(x, w)?;
        attention(s.tape, h, a, bs, bd, self.slope)
    }
}

/// Intermediate results of one PoolGAT layer.
#[derive(Clone, Copy, Debug)]
pub struct StageOut {
    pub x: Var,
    pub a: Var,
    pub assignment: Option<Var>,
    pub attention: Option<Var>,
    pub aux: Option<Var>,
}

/// GCN stacks, coarsening and attention re-weighting.
#[derive(Clone, Debug)]
pub struct PoolGatLayer {
    variant: PoolGatVariant,
    n_in: usize,
    factor: usize,
    assign: Option<(GcnStack, Linear)>,
    embed: GcnStack,
    gat: Option<Gat>,
}

impl PoolGatLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        variant: PoolGatVariant,
        n_in: usize,
        d_in: usize,
        hidden: usize,
        gcn_layers: usize,
        factor: usize,
        slope: f64,
        rng: &mut R,
    ) -> Self {
        let pooled = matches!(variant, PoolGatVariant::Full | PoolGatVariant::NoGat);
        let assign = pooled.then(|| {
            let stack = GcnStack::new(store, &format!("{name}.assign"), d_in, hidden, gcn_layers, true, rng);
            let head = Linear::new(store, &format!("{name}.assign_head"), hidden, n_in / factor, true, rng);
            (stack, head)
        });
        let embed = GcnStack::new(store, &format!("{name}.embed"), d_in, hidden, gcn_layers, false, rng);
        let attends = matches!(variant, PoolGatVariant::Full | PoolGatVariant::NoDiffpool);
        let gat = attends.then(|| Gat::new(store, &format!("{name}.gat"), hidden, slope, rng));
        Self { variant, n_in, factor, assign, embed, gat }
    }

    pub fn n_out(&self) -> usize {
        match self.variant {
            PoolGatVariant::NoDiffpool => self.n_in,
            _ => self.n_in / self.factor,
        }
    }

    /// `x: [B, n, d]`, `a: [B, n, n]`. With `aux` set, the link-prediction
    /// and assignment-entropy penalties of the soft assignment are returned.
    pub fn forward(&self, s: &mut Session<'_>, x: Var, a: Var, aux: bool) -> Result<StageOut> {
        let z = self.embed.forward(s, x, a)?;
        let mut assignment = None;
        let mut aux_loss = None;
        let (x_hat, a_hat) = match (&self.assign, self.variant) {
            (Some((stack, head)), _) => {
                let h = stack.forward(s, x, a)?;
                let logits = head.forward(s, h)?;
                let sm = s.tape.softmax(logits)?;
                assignment = Some(sm);
                if aux {
                    aux_loss = Some(assignment_penalty(s, sm, a)?);
                }
                coarsen(s.tape, sm, z, a)?
            }
            (None, PoolGatVariant::GcnOnly) => {
                let b = s.tape.constant(block_mean_assignment(self.n_in, self.factor));
                coarsen(s.tape, b, z, a)?
            }
            (None, _) => (z, a),
        };
        let (x_out, attention) = match &self.gat {
            Some(gat) => {
                let (o, alpha) = gat.forward(s, x_hat, a_hat)?;
                (o, Some(alpha))
            }
            None => (x_hat, None),
        };
        Ok(StageOut { x: x_out, a: a_hat, assignment, attention, aux: aux_loss })
    }
}

/// `mean((A - S Sᵀ)^2) + mean_i H(S_i)`.
fn assignment_penalty(s: &mut Session<'_>, sm: Var, a: Var) -> Result<Var> {
    let st = s.tape.transpose(sm)?;
    let sst = s.tape.matmul(sm, st)?;
    let diff = s.tape.sub(a, sst)?;
    let sq = s.tape.mul(diff, diff)?;
    let link = s.tape.mean_all(sq)?;
    let ln = s.tape.ln(sm)?;
    let plogp = s.tape.mul(sm, ln)?;
    let per_node = s.tape.sum_axis(plogp, s.tape.shape(plogp).len() - 1)?;
    let neg_entropy = s.tape.mean_all(per_node)?;
    s.tape.sub(link, neg_entropy)
}
