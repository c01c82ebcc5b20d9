//! Tumor growth modelling: data handling, ODE integration, neural and
//! mechanistic dynamics models, forecasting and sparse symbolic recovery.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod forecast;
pub mod linalg;
pub mod models;
pub mod neuralnet;
pub mod odeint;
pub mod symrec;
