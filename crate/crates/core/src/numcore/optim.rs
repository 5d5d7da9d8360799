use super::array::ParamStore;

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, learning_rate: f64, momentum: f64) -> Self {
        let velocity = store.iter().map(|(_, p)| vec![0.0; p.array.len()]).collect();
        Self {
            learning_rate,
            momentum,
            velocity,
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update from the gradients currently held in `store`.
    ///
    /// Gradients are left in place; the trainer zeroes them at the start of
    /// the next step.
    pub fn step(&mut self, store: &mut ParamStore) {
        assert_eq!(
            self.velocity.len(),
            store.len(),
            "optimizer state registered for a different parameter set"
        );
        let (lr, mu) = (self.learning_rate, self.momentum);
        for (p, v) in store.iter_mut().zip(self.velocity.iter_mut()) {
            let Some(g) = p.array.grad().map(|g| g.to_vec()) else {
                continue;
            };
            for ((val, vel), gi) in p.array.values_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
                *vel = mu * *vel + gi;
                *val -= lr * *vel;
            }
        }
    }
}

pub fn sgd_momentum_step(state: &mut OptimizerState, store: &mut ParamStore) {
    state.step(store);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::array::{InitSpec, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        s.register("p", vec![1], InitSpec::Explicit(vec![v]), &mut rng).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore, g: f64) {
        let p = s.lookup("p").unwrap();
        s.get_mut(p).array.zero_grad();
        s.get_mut(p).array.accumulate_grad(&[g]);
    }

    fn value(s: &ParamStore) -> f64 {
        s.get(s.lookup("p").unwrap()).array.values()[0]
    }

    #[test]
    fn plain_step() {
        let mut s = scalar_store(5.0);
        let mut opt = OptimizerState::new(&s, 1.0, 0.0);
        set_grad(&mut s, 2.0);
        sgd_momentum_step(&mut opt, &mut s);
        assert_eq!(value(&s), 3.0);
    }

    #[test]
    fn momentum_two_steps() {
        let mut s = scalar_store(0.0);
        let mut opt = OptimizerState::new(&s, 0.1, 0.9);
        for _ in 0..2 {
            set_grad(&mut s, 1.0);
            opt.step(&mut s);
        }
        assert!((value(&s) + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_zero_velocity_is_noop() {
        let mut s = scalar_store(1.5);
        let mut opt = OptimizerState::new(&s, 0.3, 0.9);
        set_grad(&mut s, 0.0);
        opt.step(&mut s);
        assert_eq!(value(&s), 1.5);
    }

    #[test]
    fn clipping_rescales_to_cap() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = s.register("a", vec![2], InitSpec::Explicit(vec![0.0, 0.0]), &mut rng).unwrap();
        let b = s.register("b", vec![1], InitSpec::Explicit(vec![0.0]), &mut rng).unwrap();
        s.get_mut(a).array.accumulate_grad(&[3.0, 0.0]);
        s.get_mut(b).array.accumulate_grad(&[4.0]);
        assert_eq!(s.clip_grad_norm(10.0), 5.0);
        assert_eq!(s.get(b).array.grad().unwrap(), &[4.0]);
        assert_eq!(s.clip_grad_norm(1.0), 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-15);
        assert!((s.get(a).array.grad().unwrap()[0] - 0.6).abs() < 1e-15);
    }
}
