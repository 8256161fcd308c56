use dico_autograd::Module;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::networks::{BackboneConfig, BackboneKind, Discriminator2D, DiscriminatorConfig, Generator};

/// Training scheme and sub-network pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Conv M1, multi-view transformer M2.
    #[default]
    DicoCt,
    /// Conv M1, multi-view conv M2.
    DicoCc,
    /// Transformer M1, multi-view transformer M2.
    DicoTt,
    /// Mean teacher: conv student with an EMA copy as teacher.
    MtBaseline,
    /// Conv network trained on the labeled cases only.
    Supervised,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::DicoCt,
        Variant::DicoCc,
        Variant::DicoTt,
        Variant::MtBaseline,
        Variant::Supervised,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::DicoCt => "dico-ct",
            Variant::DicoCc => "dico-cc",
            Variant::DicoTt => "dico-tt",
            Variant::MtBaseline => "mt-baseline",
            Variant::Supervised => "supervised",
        }
    }

    pub fn is_dico(self) -> bool {
        matches!(self, Variant::DicoCt | Variant::DicoCc | Variant::DicoTt)
    }

    pub fn kinds(self) -> (BackboneKind, BackboneKind) {
        use BackboneKind::*;
        match self {
            Variant::DicoCt => (Conv, Transformer),
            Variant::DicoCc => (Conv, Conv),
            Variant::DicoTt => (Transformer, Transformer),
            Variant::MtBaseline | Variant::Supervised => (Conv, Conv),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Settings for whichever sub-networks are convolutional.
    pub conv: BackboneConfig,
    /// Settings for whichever sub-networks are transformers.
    pub transformer: BackboneConfig,
    pub discriminator: DiscriminatorConfig,
    /// Local-view grid `(n1, n2, n3)` of the multi-view M2.
    pub multiview: [usize; 3],
    /// Seed for parameter initialisation.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv: BackboneConfig::conv(),
            transformer: BackboneConfig::transformer(),
            discriminator: DiscriminatorConfig::default(),
            multiview: [2, 2, 1],
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.conv.validate("model.conv");
        errs.extend(self.transformer.validate("model.transformer"));
        if self.conv.kind != BackboneKind::Conv {
            errs.push("model.conv.kind must be \"conv\"".into());
        }
        if self.transformer.kind != BackboneKind::Transformer {
            errs.push("model.transformer.kind must be \"transformer\"".into());
        }
        if self.conv.num_classes != self.transformer.num_classes || self.conv.in_channels != self.transformer.in_channels {
            errs.push("model.conv and model.transformer must agree on num_classes and in_channels".into());
        }
        if self.multiview.contains(&0) {
            errs.push(format!("model.multiview factors must be positive (got {:?})", self.multiview));
        }
        if self.discriminator.widths.is_empty() || self.discriminator.widths.contains(&0) {
            errs.push("model.discriminator.widths must be a non-empty list of positive widths".into());
        }
        errs
    }

    fn backbone(&self, kind: BackboneKind) -> &BackboneConfig {
        match kind {
            BackboneKind::Conv => &self.conv,
            BackboneKind::Transformer => &self.transformer,
        }
    }

    pub fn m1_config(&self, variant: Variant) -> &BackboneConfig {
        self.backbone(variant.kinds().0)
    }

    pub fn m2_config(&self, variant: Variant) -> &BackboneConfig {
        self.backbone(variant.kinds().1)
    }

    /// Spatial extents must be multiples of this for both sub-networks.
    pub fn spatial_multiple(&self, variant: Variant) -> [usize; 3] {
        let m1 = self.m1_config(variant).spatial_multiple();
        let m2 = self.m2_config(variant).spatial_multiple();
        let lcm = |a: usize, b: usize| a / gcd(a, b) * b;
        if variant.is_dico() {
            self.multiview.map(|n| lcm(m1, m2 * n))
        } else {
            [m1; 3]
        }
    }

    /// Identity of the trained architecture: SHA-256 over the model section
    /// and the variant.
    pub fn hash(&self, variant: Variant) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            variant: Variant,
            model: &'a ModelConfig,
        }
        let text = toml::to_string(&Key { variant, model: self }).expect("model config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The trainable networks of one experiment.
#[derive(Debug, Clone)]
pub struct DicoModel {
    pub variant: Variant,
    pub m1: Generator,
    pub m2: Generator,
    pub discriminator: Discriminator2D,
    /// EMA teacher, mean-teacher baseline only.
    pub ema: Option<Generator>,
}

impl DicoModel {
    pub fn new(cfg: &ModelConfig, variant: Variant) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(crate::error::DicoError::Config(errs));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let m1 = Generator::build(cfg.m1_config(variant), None, &mut rng)?;
        let m2 = Generator::build(cfg.m2_config(variant), Some(cfg.multiview), &mut rng)?;
        let discriminator = Discriminator2D::new(&cfg.discriminator, &mut rng)?;
        let ema = (variant == Variant::MtBaseline).then(|| {
            let mut t = m1.clone();
            t.freeze_in_place();
            t
        });
        Ok(DicoModel {
            variant,
            m1,
            m2,
            discriminator,
            ema,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn hash_depends_on_variant_and_model() {
        let m = ModelConfig::default();
        assert_eq!(m.hash(Variant::DicoCt), m.hash(Variant::DicoCt));
        assert_ne!(m.hash(Variant::DicoCt), m.hash(Variant::DicoCc));
        let mut m2 = m.clone();
        m2.conv.base_channels = 16;
        assert_ne!(m.hash(Variant::DicoCt), m2.hash(Variant::DicoCt));
    }

    #[test]
    fn spatial_multiple_covers_views() {
        let m = ModelConfig::default();
        // conv depth 4 -> 8; transformer patch 8 on views halved in h and w.
        assert_eq!(m.spatial_multiple(Variant::DicoCt), [16, 16, 8]);
    }
}
