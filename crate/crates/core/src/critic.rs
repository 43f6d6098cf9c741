//! Action-value network: a page CNN compresses the action grid, a dense
//! head scores it together with the state.

use rand::Rng;

use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Dense, PageConv, PageConvConfig};
use crate::tensor::{Bound, Graph, ParameterSet, Var};

#[derive(Clone, Debug)]
pub struct Critic {
    compress: PageConv,
    hidden1: Dense,
    hidden2: Dense,
    out: Dense,
    state_dim: usize,
}

impl Critic {
    pub fn new(cfg: &ModelConfig, set: &mut ParameterSet, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let conv = PageConvConfig::standard(cfg.rows, cfg.cols, cfg.item_dim, cfg.action_vec);
        let compress = PageConv::new(set, "compress", conv, rng)?;
        let hidden1 = Dense::new(set, "head1", cfg.hidden + cfg.action_vec, cfg.critic_hidden, rng)?;
        let hidden2 = Dense::new(set, "head2", cfg.critic_hidden, cfg.critic_hidden, rng)?;
        let out = Dense::new(set, "head_out", cfg.critic_hidden, 1, rng)?;
        Ok(Self { compress, hidden1, hidden2, out, state_dim: cfg.hidden })
    }

    pub fn output_layer(&self) -> &Dense {
        &self.out
    }

    /// `[B, rows, cols, dim]` action grids to `[B, action_vec]`.
    pub fn compress_action(&self, g: &mut Graph, p: &Bound, grid: Var) -> Result<Var> {
        self.compress.forward(g, p, grid)
    }

    /// `Q(s, a)` as `[B, 1]` from states `[B, hidden]` and compressed actions.
    pub fn q_value(&self, g: &mut Graph, p: &Bound, s: Var, a: Var) -> Result<Var> {
        if g.shape(s).len() != 2 || g.shape(s)[1] != self.state_dim {
            return Err(Error::shape("q_value", format!("state {:?}, want [batch, {}]", g.shape(s), self.state_dim)));
        }
        let x = g.concat(&[s, a], 1)?;
        let h = self.hidden1.forward(g, p, x)?;
        let h = g.tanh(h);
        let h = self.hidden2.forward(g, p, h)?;
        let h = g.tanh(h);
        self.out.forward(g, p, h)
    }

    /// Compress then score.
    pub fn q_of_grid(&self, g: &mut Graph, p: &Bound, s: Var, grid: Var) -> Result<Var> {
        let a = self.compress_action(g, p, grid)?;
        self.q_value(g, p, s, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build() -> (Critic, ParameterSet) {
        let mut set = ParameterSet::new();
        let c = Critic::new(&ModelConfig::default(), &mut set, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (c, set)
    }

    #[test]
    fn compress_shape_and_zero_case() {
        let (c, set) = build();
        let mut z = set.clone();
        let names: Vec<String> = z.names().map(str::to_string).collect();
        for n in names {
            z.get_mut(&n).unwrap().data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let p = g.bind(&z);
        let grid = g.constant(Tensor::zeros(vec![2, 5, 2, 50]));
        let a = c.compress_action(&mut g, &p, grid).unwrap();
        assert_eq!(g.shape(a), &[2, 64]);
        assert!(g.value(a).data().iter().all(|&v| v == 0.0));
        let bad = g.constant(Tensor::zeros(vec![1, 5, 2, 49]));
        assert!(c.compress_action(&mut g, &p, bad).is_err());
    }

    #[test]
    fn zero_output_weights_give_bias() {
        let (c, mut set) = build();
        set.get_mut(c.output_layer().weight_name()).unwrap().data_mut().fill(0.0);
        set.get_mut(c.output_layer().bias_name()).unwrap().data_mut()[0] = 0.75;
        let mut g = Graph::new();
        let p = g.bind(&set);
        let s = g.constant(Tensor::full(vec![3, 64], 0.2));
        let grid = g.constant(Tensor::full(vec![3, 5, 2, 50], -0.4));
        let q = c.q_of_grid(&mut g, &p, s, grid).unwrap();
        assert_eq!(g.value(q).data(), &[0.75; 3]);
        let wrong = g.constant(Tensor::zeros(vec![3, 63]));
        assert!(c.q_of_grid(&mut g, &p, wrong, grid).is_err());
    }
}
