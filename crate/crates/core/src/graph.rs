//! Backend abstraction for the blender pipeline.
//!
//! The pipeline in [`crate::blender`] is written once against [`Graph`]. Plain
//! evaluation uses [`Eval`]; training records the same computation on a
//! [`Tape`](crate::autodiff::Tape).

use std::marker::PhantomData;

use crate::error::Result;
use crate::tensor::{self, BinaryOp, ConvLayer, Real, Tensor3};

pub trait Graph {
    type Elem: Real;
    type Var: Clone;
    type Layer;

    fn constant(&mut self, value: Tensor3<Self::Elem>) -> Self::Var;

    fn value<'a>(&'a self, var: &'a Self::Var) -> &'a Tensor3<Self::Elem>;

    fn binary(&mut self, op: BinaryOp, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;

    fn relu(&mut self, a: &Self::Var) -> Self::Var;

    fn channel_softmax(&mut self, a: &Self::Var) -> Self::Var;

    fn concat(&mut self, parts: &[Self::Var]) -> Result<Self::Var>;

    fn conv(&mut self, input: &Self::Var, layer: &Self::Layer) -> Result<Self::Var>;

    /// Mean of all entries, broadcast back to the input's shape.
    fn mean_broadcast(&mut self, a: &Self::Var) -> Self::Var;

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.binary(BinaryOp::Mul, a, b)
    }
}

/// Direct evaluation on owned tensors.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval<T>(PhantomData<T>);

impl<T: Real> Eval<T> {
    pub fn new() -> Self {
        Eval(PhantomData)
    }
}

impl<T: Real> Graph for Eval<T> {
    type Elem = T;
    type Var = Tensor3<T>;
    type Layer = ConvLayer<T>;

    fn constant(&mut self, value: Tensor3<T>) -> Tensor3<T> {
        value
    }

    fn value<'a>(&'a self, var: &'a Tensor3<T>) -> &'a Tensor3<T> {
        var
    }

    fn binary(&mut self, op: BinaryOp, a: &Tensor3<T>, b: &Tensor3<T>) -> Result<Tensor3<T>> {
        tensor::elementwise(op, a, b)
    }

    fn relu(&mut self, a: &Tensor3<T>) -> Tensor3<T> {
        tensor::relu(a)
    }

    fn channel_softmax(&mut self, a: &Tensor3<T>) -> Tensor3<T> {
        tensor::channel_softmax(a)
    }

    fn concat(&mut self, parts: &[Tensor3<T>]) -> Result<Tensor3<T>> {
        let refs: Vec<&Tensor3<T>> = parts.iter().collect();
        tensor::concat_channels(&refs)
    }

    fn conv(&mut self, input: &Tensor3<T>, layer: &ConvLayer<T>) -> Result<Tensor3<T>> {
        tensor::conv2d_same(input, layer)
    }

    fn mean_broadcast(&mut self, a: &Tensor3<T>) -> Tensor3<T> {
        Tensor3::full(a.shape(), a.mean())
    }
}
