use crate::tensor::{Element, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    /// `x·sigmoid(x)`, also known as swish.
    Silu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "silu" | "swish" => Some(Activation::Silu),
            _ => None,
        }
    }
}

pub fn sigmoid<T: Element>(x: T) -> T {
    // split on sign so exp never overflows
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Element>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => input.map(|v| v.max(T::zero())),
        Activation::Silu => input.map(|v| v * sigmoid(v)),
    }
}

/// Gradient with respect to the activation input.
pub fn activation_backward<T: Element>(grad_out: &Tensor<T>, input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let mut g = grad_out.clone();
    let data = g.data_mut();
    match kind {
        Activation::Relu => {
            for (gv, &x) in data.iter_mut().zip(input.data()) {
                if x <= T::zero() {
                    *gv = T::zero();
                }
            }
        }
        Activation::Silu => {
            for (gv, &x) in data.iter_mut().zip(input.data()) {
                let s = sigmoid(x);
                *gv *= s * (T::one() + x * (T::one() - s));
            }
        }
    }
    g
}

pub fn sigmoid_tensor<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid)
}
