//! Named, grouped parameter storage shared by the encoder, decoder, and
//! classifier head.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    /// Parameter group ("embedding", "block0", "bottleneck", "projection", ...).
    pub group: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, group: &str, rows: usize, cols: usize, data: Vec<f64>) -> usize {
        debug_assert_eq!(data.len(), rows * cols, "shape mismatch for {name}");
        debug_assert!(self.find(name).is_none(), "duplicate param {name}");
        self.params.push(Param {
            name: name.to_string(),
            group: group.to_string(),
            rows,
            cols,
            data,
            trainable: true,
        });
        self.params.len() - 1
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Param {
        &mut self.params[id]
    }

    pub fn by_name(&self, name: &str) -> &Param {
        let id = self.find(name).unwrap_or_else(|| panic!("unknown param {name}"));
        &self.params[id]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Flip trainability for every param whose group matches the predicate.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool, trainable: bool) {
        for p in &mut self.params {
            if pred(&p.group) {
                p.trainable = trainable;
            }
        }
    }

    /// Copy of all parameter values, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.data.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot shape drift");
        for (p, s) in self.params.iter_mut().zip(snapshot.iter()) {
            p.data.copy_from_slice(s);
        }
    }
}

/// Standard-normal sample via Box-Muller, scaled by `std`.
pub fn normal_init(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos() * std);
        if out.len() < n {
            out.push(r * theta.sin() * std);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn snapshot_restore_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add("w", "g", 3, 4, normal_init(&mut rng, 12, 0.02));
        let snap = store.snapshot();
        for v in &mut store.get_mut(0).data {
            *v += 1.0;
        }
        store.restore(&snap);
        assert_eq!(store.get(0).data, snap[0]);
    }

    #[test]
    fn trainable_flags_toggle_by_group() {
        let mut store = ParamStore::new();
        store.add("a", "encoder", 1, 1, vec![0.0]);
        store.add("b", "projection", 1, 1, vec![0.0]);
        store.set_trainable_where(|g| g != "projection", false);
        assert!(!store.by_name("a").trainable);
        assert!(store.by_name("b").trainable);
        store.set_trainable_where(|g| g != "projection", true);
        assert!(store.by_name("a").trainable);
    }

    #[test]
    fn normal_init_moments_are_sane() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = normal_init(&mut rng, 20_000, 0.5);
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        let var: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02);
        assert!((var.sqrt() - 0.5).abs() < 0.02);
    }
}
