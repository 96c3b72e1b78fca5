//! Linear support vector machine trained by dual coordinate descent on the
//! L1 (hinge) loss, with the bias folded in as a constant feature and class
//! weights balanced so a handful of positives is not drowned out.

use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct LinearSvm {
    pub c: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    weights: Vec<f64>,
    bias: f64,
}

impl Default for LinearSvm {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl LinearSvm {
    pub fn new(c: f64) -> Self {
        Self {
            c,
            max_epochs: 200,
            tolerance: 1e-4,
            weights: Vec::new(),
            bias: 0.0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Signed distance-like score; positive means "fails".
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Fit on `xs` with labels `ys` (true = positive). With a single class
    /// the model degenerates to a constant decision of that class's sign.
    ///
    /// Identical labelled points are merged into one point whose box bound
    /// is scaled by its multiplicity, which leaves the dual optimum intact.
    pub fn fit(&mut self, xs: &[&[f64]], ys: &[bool]) {
        assert_eq!(xs.len(), ys.len());
        let dim = xs.first().map_or(0, |x| x.len());
        self.weights = vec![0.0; dim];
        self.bias = 0.0;
        let n = xs.len();
        let n_pos = ys.iter().filter(|&&y| y).count();
        let n_neg = n - n_pos;
        if n_pos == 0 || n_neg == 0 {
            self.bias = if n_pos > 0 {
                1.0
            } else if n_neg > 0 {
                -1.0
            } else {
                0.0
            };
            return;
        }
        let upper_pos = self.c * n as f64 / (2.0 * n_pos as f64);
        let upper_neg = self.c * n as f64 / (2.0 * n_neg as f64);

        let mut index: HashMap<(Vec<u64>, bool), usize> = HashMap::new();
        let mut points: Vec<(&[f64], f64, f64)> = Vec::new();
        for (&x, &y) in xs.iter().zip(ys) {
            let key = (x.iter().map(|v| v.to_bits()).collect(), y);
            let base = if y { upper_pos } else { upper_neg };
            match index.get(&key) {
                Some(&i) => points[i].2 += base,
                None => {
                    index.insert(key, points.len());
                    points.push((x, if y { 1.0 } else { -1.0 }, base));
                }
            }
        }
        let qii: Vec<f64> = points
            .iter()
            .map(|(x, _, _)| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
            .collect();
        let mut alpha = vec![0.0; points.len()];

        for _ in 0..self.max_epochs {
            let mut pg_max = f64::NEG_INFINITY;
            let mut pg_min = f64::INFINITY;
            for (i, &(x, sign, upper)) in points.iter().enumerate() {
                let g = sign * self.decision(x) - 1.0;
                let pg = if alpha[i] <= 0.0 {
                    g.min(0.0)
                } else if alpha[i] >= upper {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg.abs() > 1e-12 {
                    let old = alpha[i];
                    alpha[i] = (old - g / qii[i]).clamp(0.0, upper);
                    let step = (alpha[i] - old) * sign;
                    for (w, v) in self.weights.iter_mut().zip(x) {
                        *w += step * v;
                    }
                    self.bias += step;
                }
            }
            if pg_max - pg_min < self.tolerance {
                break;
            }
        }
    }
}
