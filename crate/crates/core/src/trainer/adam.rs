use crate::encoder::{EncoderParams, ParamGrads, Real, Tower, TowerGrad};

/// Adam with bias correction. State mirrors the parameter layout.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    first: Vec<Tower<T>>,
    second: Vec<Tower<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &EncoderParams<T>) -> Self {
        let zeros: Vec<Tower<T>> = params
            .towers()
            .map(|t| Tower::zeros(t.buckets, t.dim))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams<T>, grads: &ParamGrads<T>, lr: f64) {
        self.step += 1;
        let lr_t =
            lr * (1.0 - self.beta2.powi(self.step)).sqrt() / (1.0 - self.beta1.powi(self.step));
        let h = Hyper {
            b1: T::of(self.beta1),
            b2: T::of(self.beta2),
            eps: T::of(self.eps),
            lr: T::of(lr_t),
        };
        for (((tower, grad), m), v) in params
            .towers_mut()
            .zip(grads.towers())
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            update_tower(tower, grad, m, v, &h);
        }
    }
}

struct Hyper<T> {
    b1: T,
    b2: T,
    eps: T,
    lr: T,
}

fn update<T: Real>(p: &mut [T], m: &mut [T], v: &mut [T], g: Option<&[T]>, h: &Hyper<T>) {
    let one = T::one();
    for i in 0..p.len() {
        let gi = g.map_or(T::zero(), |g| g[i]);
        m[i] = h.b1 * m[i] + (one - h.b1) * gi;
        v[i] = h.b2 * v[i] + (one - h.b2) * gi * gi;
        p[i] -= h.lr * m[i] / (v[i].sqrt() + h.eps);
    }
}

fn update_tower<T: Real>(
    p: &mut Tower<T>,
    g: &TowerGrad<T>,
    m: &mut Tower<T>,
    v: &mut Tower<T>,
    h: &Hyper<T>,
) {
    let dim = p.dim;
    let mut touched = g.token_rows.iter().peekable();
    for r in 0..p.buckets {
        let span = r * dim..(r + 1) * dim;
        let grad = match touched.peek() {
            Some((&k, row)) if k as usize == r => {
                let row: &[T] = row;
                touched.next();
                Some(row)
            }
            _ => None,
        };
        update(
            &mut p.token_table[span.clone()],
            &mut m.token_table[span.clone()],
            &mut v.token_table[span],
            grad,
            h,
        );
    }
    update(
        &mut p.w_hidden,
        &mut m.w_hidden,
        &mut v.w_hidden,
        Some(&g.w_hidden),
        h,
    );
    update(
        &mut p.b_hidden,
        &mut m.b_hidden,
        &mut v.b_hidden,
        Some(&g.b_hidden),
        h,
    );
    update(&mut p.w_out, &mut m.w_out, &mut v.w_out, Some(&g.w_out), h);
    update(&mut p.b_out, &mut m.b_out, &mut v.b_out, Some(&g.b_out), h);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let cfg = EncoderConfig {
            embed_dim: 2,
            hash_buckets: 4,
            ..Default::default()
        };
        let mut p = EncoderParams::<f64>::zeros(cfg).unwrap();
        let mut g = ParamGrads::zeros_like(&p);
        g.query.b_out = vec![3.0, -0.5];
        g.query.token_rows.insert(2, vec![1.0, 0.0]);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.1);
        assert!((p.query.b_out[0] + 0.1).abs() < 1e-6);
        assert!((p.query.b_out[1] - 0.1).abs() < 1e-6);
        assert!((p.query.token_table[4] + 0.1).abs() < 1e-6);
        assert_eq!(p.query.token_table[5], 0.0);
        assert_eq!(p.query.token_table[0], 0.0);
    }
}
