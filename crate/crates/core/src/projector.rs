//! Interaction representations `z = [u ; e_i]` and the two-layer GELU
//! projector into the anchor space.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ItemId, Rating, UserId};
use crate::encoder::UserState;
use crate::error::{Error, Result};
use crate::math::{gelu, gelu_grad};
use crate::tensor::tensor_fields;

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionRep {
    pub z: Array1<f64>,
    pub user: Option<UserId>,
    pub item: ItemId,
    pub rating: Rating,
    pub position: usize,
}

/// Concatenate a user state and an item embedding.
pub fn build_interaction_rep(
    state: &UserState,
    item: ItemId,
    item_embedding: ArrayView1<f64>,
    rating: Rating,
) -> Result<InteractionRep> {
    if state.vector.len() != item_embedding.len() {
        return Err(Error::DimensionMismatch {
            expected: state.vector.len(),
            actual: item_embedding.len(),
        });
    }
    Ok(InteractionRep {
        z: concatenate![Axis(0), state.vector.view(), item_embedding],
        user: None,
        item,
        rating,
        position: state.as_of,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    /// Test mode: makes the projector affine.
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Identity => x,
        }
    }

    fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_grad(x),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorParams {
    /// `2 d_rec x d_hidden`; rows `..d_rec` act on the user half.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `d_hidden x d_llm`.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    #[serde(default)]
    pub activation: Activation,
}

tensor_fields!(ProjectorParams { w1, b1, w2, b2 });

/// Forward intermediates for [`ProjectorParams::backward_pairs`].
#[derive(Clone, Debug)]
pub struct ProjectorCache {
    users: Array2<f64>,
    items: Array2<f64>,
    owner: Vec<usize>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl ProjectorParams {
    /// Weights `N(0, 1/fan_in)`, zero biases.
    pub fn init<R: Rng>(d_rec: usize, d_hidden: usize, d_llm: usize, rng: &mut R) -> Self {
        let fan1 = 2 * d_rec;
        let w1 = Array2::from_shape_simple_fn((fan1, d_hidden), || {
            rng.sample::<f64, _>(StandardNormal) / (fan1 as f64).sqrt()
        });
        let w2 = Array2::from_shape_simple_fn((d_hidden, d_llm), || {
            rng.sample::<f64, _>(StandardNormal) / (d_hidden as f64).sqrt()
        });
        ProjectorParams {
            w1,
            b1: Array1::zeros(d_hidden),
            w2,
            b2: Array1::zeros(d_llm),
            activation: Activation::Gelu,
        }
    }

    pub fn d_rec(&self) -> usize {
        self.w1.nrows() / 2
    }

    pub fn d_llm(&self) -> usize {
        self.w2.ncols()
    }

    pub fn project(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        if z.len() != self.w1.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.w1.nrows(),
                actual: z.len(),
            });
        }
        let d = self.d_rec();
        let users = z.slice(s![..d]).insert_axis(Axis(0));
        let items = z.slice(s![d..]).insert_axis(Axis(0));
        let (v, _) = self.forward_pairs(users, items, &[0]);
        Ok(v.row(0).to_owned())
    }

    /// Project rows `[users[owner[n]] ; items[n]]` without materializing the
    /// concatenation; the user half of the first layer is computed once per
    /// distinct user row.
    pub fn forward_pairs(
        &self,
        users: ArrayView2<f64>,
        items: ArrayView2<f64>,
        owner: &[usize],
    ) -> (Array2<f64>, ProjectorCache) {
        let d = self.d_rec();
        let user_part = users.dot(&self.w1.slice(s![..d, ..]));
        let mut pre = items.dot(&self.w1.slice(s![d.., ..]));
        for (mut row, &o) in pre.rows_mut().into_iter().zip(owner) {
            row += &user_part.row(o);
            row += &self.b1;
        }
        let act = self.activation;
        let hidden = pre.mapv(|x| act.apply(x));
        let v = hidden.dot(&self.w2) + &self.b2;
        (
            v,
            ProjectorCache {
                users: users.to_owned(),
                items: items.to_owned(),
                owner: owner.to_vec(),
                pre,
                hidden,
            },
        )
    }

    /// Accumulate parameter gradients; returns `(d_users, d_items)`.
    pub fn backward_pairs(
        &self,
        cache: &ProjectorCache,
        dv: &Array2<f64>,
        grads: &mut ProjectorParams,
    ) -> (Array2<f64>, Array2<f64>) {
        let d = self.d_rec();
        grads.w2 += &cache.hidden.t().dot(dv);
        grads.b2 += &dv.sum_axis(Axis(0));
        let act = self.activation;
        let mut dpre = dv.dot(&self.w2.t());
        dpre.zip_mut_with(&cache.pre, |g, &x| *g *= act.grad(x));
        grads.b1 += &dpre.sum_axis(Axis(0));

        let mut dpre_user = Array2::zeros((cache.users.nrows(), dpre.ncols()));
        for (row, &o) in dpre.rows().into_iter().zip(&cache.owner) {
            let mut acc = dpre_user.row_mut(o);
            acc += &row;
        }
        {
            let mut gw_user = grads.w1.slice_mut(s![..d, ..]);
            gw_user += &cache.users.t().dot(&dpre_user);
        }
        {
            let mut gw_item = grads.w1.slice_mut(s![d.., ..]);
            gw_item += &cache.items.t().dot(&dpre);
        }
        let d_users = dpre_user.dot(&self.w1.slice(s![..d, ..]).t());
        let d_items = dpre.dot(&self.w1.slice(s![d.., ..]).t());
        (d_users, d_items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::tensor::Tensors;

    fn params(act: Activation) -> ProjectorParams {
        let mut p = ProjectorParams::init(4, 12, 6, &mut seed::rng(11));
        p.activation = act;
        p
    }

    #[test]
    fn zero_input_with_zero_bias_projects_to_zero() {
        let p = params(Activation::Gelu);
        let v = p.project(Array1::zeros(8).view()).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let p = params(Activation::Gelu);
        assert!(matches!(
            p.project(Array1::zeros(7).view()),
            Err(Error::DimensionMismatch { expected: 8, actual: 7 })
        ));
        let state = UserState {
            vector: Array1::zeros(4),
            as_of: 0,
        };
        assert!(build_interaction_rep(&state, ItemId(0), Array1::zeros(5).view(), Rating::ALL[0]).is_err());
    }

    #[test]
    fn interaction_rep_concatenates_in_order() {
        let u = UserState {
            vector: Array1::from(vec![1.0, 2.0]),
            as_of: 3,
        };
        let e = Array1::from(vec![3.0, 4.0]);
        let rep = build_interaction_rep(&u, ItemId(1), e.view(), Rating::ALL[4]).unwrap();
        assert_eq!(rep.z.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        let swapped = UserState {
            vector: e.clone(),
            as_of: 3,
        };
        let rep2 = build_interaction_rep(&swapped, ItemId(1), u.vector.view(), Rating::ALL[4]).unwrap();
        assert_ne!(rep.z, rep2.z);
        let zero = UserState {
            vector: Array1::zeros(64),
            as_of: 0,
        };
        let rep3 = build_interaction_rep(&zero, ItemId(0), Array1::zeros(64).view(), Rating::ALL[0]).unwrap();
        assert_eq!(rep3.z.len(), 128);
        assert!(rep3.z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_activation_is_affine() {
        let p = params(Activation::Identity);
        let z1 = Array1::from_shape_fn(8, |i| (i as f64 * 0.7).sin());
        let z2 = Array1::from_shape_fn(8, |i| (i as f64 * 1.3).cos() * 2.0);
        for &alpha in &[0.0, 0.25, 0.5, 0.9] {
            let mix = &z1 * alpha + &z2 * (1.0 - alpha);
            let lhs = p.project(mix.view()).unwrap();
            let rhs = p.project(z1.view()).unwrap() * alpha + p.project(z2.view()).unwrap() * (1.0 - alpha);
            let err = (&lhs - &rhs).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-10, "alpha {alpha}: {err}");
        }
    }

    #[test]
    fn squared_norm_gradient_matches_finite_differences() {
        let mut p = params(Activation::Gelu);
        p.b1 = Array1::from_shape_fn(12, |i| 0.1 * (i as f64).sin());
        p.b2 = Array1::from_shape_fn(6, |i| 0.1 * (i as f64).cos());
        let z = Array1::from_shape_fn(8, |i| (i as f64 * 0.9).sin());
        let loss = |p: &ProjectorParams| {
            let v = p.project(z.view()).unwrap();
            v.dot(&v)
        };
        let d = p.d_rec();
        let users = z.slice(s![..d]).insert_axis(Axis(0)).to_owned();
        let items = z.slice(s![d..]).insert_axis(Axis(0)).to_owned();
        let (v, cache) = p.forward_pairs(users.view(), items.view(), &[0]);
        let mut grads = p.clone();
        crate::tensor::zero(&mut grads);
        p.backward_pairs(&cache, &(v * 2.0), &mut grads);

        let eps = 1e-5;
        let analytic: Vec<(String, Vec<f64>)> =
            grads.named().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
        for (ti, (name, g)) in analytic.iter().enumerate() {
            for (j, &a) in g.iter().enumerate() {
                let mut plus = p.clone();
                plus.named_mut()[ti].1[j] += eps;
                let mut minus = p.clone();
                minus.named_mut()[ti].1[j] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-7);
                assert!(rel < 1e-4, "{name}[{j}]: analytic {a} vs fd {fd}");
            }
        }
    }
}
