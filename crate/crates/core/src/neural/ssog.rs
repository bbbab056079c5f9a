use crate::dictionary::{DictionaryDesc, ObservableDictionary};
use crate::error::{shape_err, Result};

use super::mlp::Mlp;

/// Single frozen network lifting `x` to `[x; g(x)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDictionary {
    net: Mlp,
    checkpoint: Option<String>,
}

impl NeuralDictionary {
    pub fn new(net: Mlp) -> Self {
        Self { net, checkpoint: None }
    }

    /// Records where the weights live, for model bundle descriptions.
    pub fn with_checkpoint(mut self, path: impl Into<String>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }
}

impl ObservableDictionary for NeuralDictionary {
    fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn observable_count(&self) -> usize {
        self.net.output_dim()
    }

    fn lift_into(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out[..n].copy_from_slice(x);
        self.net.forward_into(x, &mut out[n..]);
    }

    fn describe(&self) -> DictionaryDesc {
        DictionaryDesc::Neural {
            n: self.state_dim(),
            m: self.observable_count(),
            checkpoint: self.checkpoint.clone(),
        }
    }
}

/// Joint dictionary `z = [x; g_u(x); g_s(x)]` built from the frozen unstable
/// and stable networks.
#[derive(Debug, Clone, PartialEq)]
pub struct SsogDictionary {
    unstable: NeuralDictionary,
    stable: NeuralDictionary,
}

pub fn build_ssog(unstable: NeuralDictionary, stable: NeuralDictionary) -> Result<SsogDictionary> {
    if unstable.state_dim() != stable.state_dim() {
        return Err(shape_err("build_ssog", unstable.state_dim(), stable.state_dim()));
    }
    Ok(SsogDictionary { unstable, stable })
}

impl SsogDictionary {
    pub fn unstable(&self) -> &NeuralDictionary {
        &self.unstable
    }

    pub fn stable(&self) -> &NeuralDictionary {
        &self.stable
    }
}

impl ObservableDictionary for SsogDictionary {
    fn state_dim(&self) -> usize {
        self.unstable.state_dim()
    }

    fn observable_count(&self) -> usize {
        self.unstable.observable_count() + self.stable.observable_count()
    }

    fn lift_into(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let mu = self.unstable.observable_count();
        out[..n].copy_from_slice(x);
        self.unstable.net.forward_into(x, &mut out[n..n + mu]);
        self.stable.net.forward_into(x, &mut out[n + mu..]);
    }

    fn describe(&self) -> DictionaryDesc {
        DictionaryDesc::Concat {
            n: self.state_dim(),
            m: self.observable_count(),
            parts: vec![self.unstable.describe(), self.stable.describe()],
        }
    }
}
