//! Small dense networks over flat parameter vectors with hand-written
//! reverse mode: the three actors, the centralized critic with its
//! monotonic mixer, Adam, and the checkpoint container.

mod actor;
mod adam;
mod checkpoint;
mod critic;
mod mlp;

pub use actor::{entropy_and_grad, log_prob_grad, ActorNet, ActorOutput};
pub use adam::{clip_grad_norm, Adam};
pub use checkpoint::Checkpoint;
pub use critic::{mix, CriticBundle, CriticOutput, HEADS, HEAD_SCALES, N_AGENTS};
pub use mlp::{MlpCache, MlpLayout};

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, Choice, Decision, Policy};
use crate::error::{Error, Result};
use crate::scoring::FusionWeights;

/// Network sizes and initialisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub trunk_hidden: usize,
    pub trunk_layers: usize,
    pub scorer_hidden: usize,
    pub critic_hidden: usize,
    pub critic_layers: usize,
    pub mixer_hidden: usize,
    /// Init gain of output heads.
    pub head_gain: f64,
    /// Keep the architect's fusion weights at their initial values.
    pub freeze_fusion: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            trunk_hidden: 64,
            trunk_layers: 2,
            scorer_hidden: 32,
            critic_hidden: 64,
            critic_layers: 2,
            mixer_hidden: 32,
            head_gain: 0.01,
            freeze_fusion: false,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [self.trunk_hidden, self.trunk_layers, self.scorer_hidden, self.critic_hidden, self.critic_layers, self.mixer_hidden];
        if sizes.contains(&0) {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        if !(self.head_gain.is_finite() && self.head_gain > 0.0) {
            return Err(Error::Config("head_gain must be positive".into()));
        }
        Ok(())
    }

    fn as_section(&self) -> Vec<f64> {
        [self.trunk_hidden, self.trunk_layers, self.scorer_hidden, self.critic_hidden, self.critic_layers, self.mixer_hidden]
            .iter()
            .map(|&v| v as f64)
            .chain([self.head_gain, self.freeze_fusion as u8 as f64])
            .collect()
    }

    fn from_section(v: &[f64]) -> Result<Self> {
        if v.len() != 8 {
            return Err(Error::Checkpoint("malformed network section".into()));
        }
        let cfg = NetConfig {
            trunk_hidden: v[0] as usize,
            trunk_layers: v[1] as usize,
            scorer_hidden: v[2] as usize,
            critic_hidden: v[3] as usize,
            critic_layers: v[4] as usize,
            mixer_hidden: v[5] as usize,
            head_gain: v[6],
            freeze_fusion: v[7] != 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The three actors; acts as the decentralised policy.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorSet {
    pub nets: [ActorNet; 3],
}

impl ActorSet {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        ActorSet { nets: AgentKind::ALL.map(|a| ActorNet::new(a, cfg, rng)) }
    }

    pub fn get(&self, agent: AgentKind) -> &ActorNet {
        &self.nets[agent.index()]
    }
}

impl Policy for ActorSet {
    fn choose(&self, decision: &Decision, greedy: bool, rng: &mut dyn RngCore) -> Result<Choice> {
        let out = self.get(decision.agent).forward(decision)?;
        let index = crate::agents::pick(&out.probs, greedy, rng);
        Ok(Choice { index, log_prob: out.log_probs[index], logits: out.logits })
    }

    fn fusion_weights(&self) -> FusionWeights {
        self.get(AgentKind::Architect).fusion_weights()
    }
}

/// Actors plus critic: everything a checkpoint carries besides duals.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    pub actors: ActorSet,
    pub critic: CriticBundle,
}

const NET_SECTION: &str = "net";
const CRITIC_SECTION: &str = "critic";

fn actor_section(a: AgentKind) -> String {
    format!("actor.{}", a.name())
}

impl Model {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let actors = ActorSet::new(&config, &mut rng);
        let critic = CriticBundle::new(&config, &mut rng);
        Ok(Model { config, actors, critic })
    }

    pub fn write_sections(&self, ck: &mut Checkpoint) {
        ck.push(NET_SECTION, self.config.as_section());
        for a in AgentKind::ALL {
            ck.push(&actor_section(a), self.actors.get(a).params.clone());
        }
        ck.push(CRITIC_SECTION, self.critic.params.clone());
    }

    /// Hex SHA-256 over every parameter's bit pattern, actors then critic.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for a in AgentKind::ALL {
            for p in &self.actors.get(a).params {
                h.update(p.to_bits().to_le_bytes());
            }
        }
        for p in &self.critic.params {
            h.update(p.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = NetConfig::from_section(ck.get(NET_SECTION)?)?;
        let mut model = Model::new(config, 0)?;
        for a in AgentKind::ALL {
            model.actors.nets[a.index()]
                .set_params(ck.get(&actor_section(a))?.to_vec())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        model
            .critic
            .set_params(ck.get(CRITIC_SECTION)?.to_vec())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trips_through_checkpoint() {
        let m = Model::new(NetConfig::default(), 3).unwrap();
        let mut ck = Checkpoint::default();
        m.write_sections(&mut ck);
        let back = Model::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn same_seed_same_model() {
        assert_eq!(Model::new(NetConfig::default(), 9).unwrap(), Model::new(NetConfig::default(), 9).unwrap());
        assert_ne!(Model::new(NetConfig::default(), 9).unwrap(), Model::new(NetConfig::default(), 10).unwrap());
    }

    #[test]
    fn checksum_tracks_parameters() {
        let m = Model::new(NetConfig::default(), 4).unwrap();
        assert_eq!(m.checksum(), m.clone().checksum());
        assert_eq!(m.checksum().len(), 64);
        let mut n = m.clone();
        n.critic.params[0] += 1e-12;
        assert_ne!(n.checksum(), m.checksum());
    }

    #[test]
    fn zero_sizes_rejected() {
        let cfg = NetConfig { scorer_hidden: 0, ..NetConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
