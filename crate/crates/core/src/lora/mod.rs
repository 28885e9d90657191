//! Frozen backbone with injectable low-rank adapters.
//!
//! Each block computes `y = act(M x + B A x)`; the adapter term is present
//! only on adapted blocks. Adapters start with `B = 0`, so injection never
//! changes the model output until training moves `B`. No `alpha / r`
//! scaling is applied.

mod config;
mod stack;

pub use config::LoraConfig;
pub use stack::{
    init_adapter, Activation, AdapterGrads, BackboneLayer, FactorGrads, ForwardCache, LayerStack, LoraAdapter, ParamId,
    DEFAULT_ADAPTER_INIT_STD,
};
