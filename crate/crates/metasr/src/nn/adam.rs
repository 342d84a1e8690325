//! Adam with bias correction, keyed by parameter name.

use std::collections::BTreeMap;

use super::element::Element;
use super::error::NnError;
use super::store::ParameterStore;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for a fixed set of trainable parameters.
pub struct Adam<E: Element> {
    cfg: AdamConfig,
    step_count: u64,
    names: Vec<String>,
    m: BTreeMap<String, Vec<E>>,
    v: BTreeMap<String, Vec<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(names: Vec<String>, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step_count: 0,
            names,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// One update. `grads` must contain an entry for every registered
    /// parameter; anything extra is ignored.
    pub fn step(
        &mut self,
        store: &mut ParameterStore<E>,
        grads: &[(String, Vec<E>)],
    ) -> Result<(), NnError> {
        let grad_map: BTreeMap<&str, &Vec<E>> =
            grads.iter().map(|(n, g)| (n.as_str(), g)).collect();
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = E::from_f64(1.0 - self.cfg.beta1.powi(t));
        let bias2 = E::from_f64(1.0 - self.cfg.beta2.powi(t));
        let lr = E::from_f64(self.cfg.lr);
        let b1 = E::from_f64(self.cfg.beta1);
        let b2 = E::from_f64(self.cfg.beta2);
        let one_m_b1 = E::ONE - b1;
        let one_m_b2 = E::ONE - b2;
        let eps = E::from_f64(self.cfg.eps);

        for name in &self.names {
            let g = *grad_map
                .get(name.as_str())
                .ok_or_else(|| NnError::MissingGradient(name.clone()))?;
            let param = store.get_mut(name)?;
            if g.len() != param.numel() {
                return Err(NnError::ParameterShape {
                    name: name.clone(),
                    param: param.shape().to_vec(),
                    stored: vec![g.len()],
                });
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![E::ZERO; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![E::ZERO; g.len()]);
            for ((p, (&gi, mi)), vi) in param
                .data_mut()
                .iter_mut()
                .zip(g.iter().zip(m.iter_mut()))
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + one_m_b1 * gi;
                *vi = b2 * *vi + one_m_b2 * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Serialize moments and step count as store entries under `prefix`.
    pub fn export_into(&self, prefix: &str, target: &mut ParameterStore<E>) {
        target.insert(
            format!("{prefix}step_count"),
            Tensor::new(&[1], vec![E::from_f64(self.step_count as f64)]).expect("one value"),
        );
        for (name, m) in &self.m {
            target.insert(
                format!("{prefix}m.{name}"),
                Tensor::new(&[m.len()], m.clone()).expect("flat"),
            );
        }
        for (name, v) in &self.v {
            target.insert(
                format!("{prefix}v.{name}"),
                Tensor::new(&[v.len()], v.clone()).expect("flat"),
            );
        }
    }

    /// Restore moments and step count exported by [`Adam::export_into`].
    pub fn import_from(
        &mut self,
        prefix: &str,
        source: &ParameterStore<E>,
    ) -> Result<(), NnError> {
        let step = source.get(&format!("{prefix}step_count"))?;
        self.step_count = step.data()[0].to_f64() as u64;
        self.m.clear();
        self.v.clear();
        for name in &self.names {
            if let Ok(m) = source.get(&format!("{prefix}m.{name}")) {
                self.m.insert(name.clone(), m.data().to_vec());
            }
            if let Ok(v) = source.get(&format!("{prefix}v.{name}")) {
                self.v.insert(name.clone(), v.data().to_vec());
            }
        }
        Ok(())
    }
}
