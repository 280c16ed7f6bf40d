//! Named views over parameter tensors, used by the optimizer, the gradient
//! checker and the finiteness guard.

use ndarray::{Array1, Array2};

pub trait Tensors {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>);
    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>);

    fn named(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.tensors("", &mut out);
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        self.tensors_mut("", &mut out);
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Tensors for Array1<f64> {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        out.push((prefix.to_string(), self.as_slice().expect("standard layout")));
    }
    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((prefix.to_string(), self.as_slice_mut().expect("standard layout")));
    }
}

impl Tensors for Array2<f64> {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        out.push((prefix.to_string(), self.as_slice().expect("standard layout")));
    }
    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((prefix.to_string(), self.as_slice_mut().expect("standard layout")));
    }
}

impl<T: Tensors> Tensors for Vec<T> {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        for (i, t) in self.iter().enumerate() {
            t.tensors(&join(prefix, &i.to_string()), out);
        }
    }
    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        for (i, t) in self.iter_mut().enumerate() {
            t.tensors_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// Implements [`Tensors`] by visiting the listed fields in order.
macro_rules! tensor_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::tensor::Tensors for $ty {
            fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
                $( self.$field.tensors(&$crate::tensor::join(prefix, stringify!($field)), out); )*
            }
            fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
                $( self.$field.tensors_mut(&$crate::tensor::join(prefix, stringify!($field)), out); )*
            }
        }
    };
}
pub(crate) use tensor_fields;

/// `dst += src` over two structurally identical parameter sets.
pub fn add_assign<T: Tensors>(dst: &mut T, src: &T) {
    for ((_, d), (_, s)) in dst.named_mut().into_iter().zip(src.named()) {
        for (a, b) in d.iter_mut().zip(s) {
            *a += b;
        }
    }
}

/// Every entry set to zero, keeping shapes.
pub fn zero<T: Tensors>(t: &mut T) {
    for (_, d) in t.named_mut() {
        d.fill(0.0);
    }
}
