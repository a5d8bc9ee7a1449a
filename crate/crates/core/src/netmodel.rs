//! Network components: point-set encoders, the latent shape fusion module,
//! the two decoders, the discriminators and their composition.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::seed::{derive_seed, stable_hash};

pub const LEAKY_SLOPE: f64 = 0.2;
/// Prefix of the target branch's private copies under the no-share ablation.
pub const TARGET_PREFIX: &str = "tar.";
/// Modules executed by both branches.
pub const SHARED_MODULES: [&str; 3] = ["enc_p", "lsfm", "dec_c"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelArchitecture {
    pub partial_points: usize,
    pub complete_points: usize,
    /// Per-point widths of every encoder, input 3 first; the last entry is the latent width.
    pub encoder: Vec<usize>,
    pub lsfm_width: usize,
    pub residual_blocks: usize,
    /// Decoder widths, latent first, `3 * complete_points` last.
    pub decoder: Vec<usize>,
    pub latent_disc: Vec<usize>,
    pub cloud_disc_point: Vec<usize>,
    pub cloud_disc_head: Vec<usize>,
}

impl Default for ModelArchitecture {
    fn default() -> Self {
        ModelArchitecture::full()
    }
}

impl ModelArchitecture {
    pub fn full() -> Self {
        ModelArchitecture {
            partial_points: 1024,
            complete_points: 2048,
            encoder: vec![3, 128, 256],
            lsfm_width: 512,
            residual_blocks: 5,
            decoder: vec![256, 512, 512, 1024, 3072, 6144],
            latent_disc: vec![256, 256, 64, 1],
            cloud_disc_point: vec![3, 64, 128],
            cloud_disc_head: vec![128, 64, 1],
        }
    }

    /// Narrower hidden layers for single-core training; point counts and
    /// latent/fusion widths unchanged.
    pub fn desk() -> Self {
        ModelArchitecture {
            encoder: vec![3, 64, 256],
            decoder: vec![256, 256, 256, 512, 512, 6144],
            ..ModelArchitecture::full()
        }
    }

    /// Tiny variant for gradient checks and property tests.
    pub fn toy() -> Self {
        ModelArchitecture {
            partial_points: 16,
            complete_points: 32,
            encoder: vec![3, 10, 8],
            lsfm_width: 12,
            residual_blocks: 2,
            decoder: vec![8, 16, 12, 20, 24, 96],
            latent_disc: vec![8, 6, 1],
            cloud_disc_point: vec![3, 6, 8],
            cloud_disc_head: vec![8, 4, 1],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            "toy" => Ok(Self::toy()),
            _ => Err(Error::Config(format!(
                "unknown architecture preset {name:?} (expected full, desk or toy)"
            ))),
        }
    }

    pub fn latent(&self) -> usize {
        *self.encoder.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let l = self.latent();
        if self.partial_points == 0 || self.complete_points == 0 {
            return bad("point counts must be positive".into());
        }
        for (name, w) in [
            ("encoder", &self.encoder),
            ("decoder", &self.decoder),
            ("latent_disc", &self.latent_disc),
            ("cloud_disc_point", &self.cloud_disc_point),
            ("cloud_disc_head", &self.cloud_disc_head),
        ] {
            if w.len() < 2 || w.contains(&0) {
                return bad(format!("{name} needs at least two positive widths"));
            }
        }
        if self.encoder[0] != 3 || self.cloud_disc_point[0] != 3 {
            return bad("point-wise networks take 3 input channels".into());
        }
        if self.decoder[0] != l || self.latent_disc[0] != l {
            return bad(format!("decoder and latent discriminator must take the latent width {l}"));
        }
        if *self.decoder.last().unwrap() != 3 * self.complete_points {
            return bad(format!("decoder must emit {} values", 3 * self.complete_points));
        }
        if self.cloud_disc_head[0] != *self.cloud_disc_point.last().unwrap() {
            return bad("cloud discriminator head must take the pooled width".into());
        }
        if *self.latent_disc.last().unwrap() != 1 || *self.cloud_disc_head.last().unwrap() != 1 {
            return bad("discriminators emit one score".into());
        }
        if self.lsfm_width == 0 || self.residual_blocks == 0 {
            return bad("lsfm needs a positive width and at least one residual block".into());
        }
        Ok(())
    }

    /// Every parameter as `(name, fan_in, fan_out)` of its layer; weights are
    /// `fan_in x fan_out` and biases `1 x fan_out`.
    pub fn layers(&self, opts: &ModelOptions) -> Vec<(String, usize, usize)> {
        fn mlp(out: &mut Vec<(String, usize, usize)>, prefix: &str, widths: &[usize]) {
            for (i, w) in widths.windows(2).enumerate() {
                out.push((format!("{prefix}.l{i}"), w[0], w[1]));
            }
        }
        let copies: &[&str] = if opts.no_share { &["", TARGET_PREFIX] } else { &[""] };
        let (l, h) = (self.latent(), self.lsfm_width);
        let mut out = Vec::new();
        for p in copies {
            mlp(&mut out, &format!("{p}enc_p"), &self.encoder);
        }
        mlp(&mut out, "enc_m", &self.encoder);
        mlp(&mut out, "enc_c", &self.encoder);
        for p in copies {
            out.push((format!("{p}lsfm.lift_p"), l, h));
            out.push((format!("{p}lsfm.lift_m"), l, h));
            for i in 0..self.residual_blocks {
                out.push((format!("{p}lsfm.res{i}"), h, h));
            }
            out.push((format!("{p}lsfm.fuse_res"), h, h));
            out.push((format!("{p}lsfm.proj1"), 2 * h, h));
            out.push((format!("{p}lsfm.proj2"), 2 * h, h));
            out.push((format!("{p}lsfm.out"), h, l));
        }
        for p in copies {
            mlp(&mut out, &format!("{p}dec_c"), &self.decoder);
        }
        mlp(&mut out, "dec_r", &self.decoder);
        if opts.discriminators {
            mlp(&mut out, "disc_lat", &self.latent_disc);
            mlp(&mut out, "disc_pc.point", &self.cloud_disc_point);
            mlp(&mut out, "disc_pc.head", &self.cloud_disc_head);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelOptions {
    /// Give the target branch its own encoder, fusion module and decoder.
    pub no_share: bool,
    pub discriminators: bool,
}

/// Fresh parameters; each layer is drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
/// with a stream derived from the seed and the layer name.
pub fn init_params(arch: &ModelArchitecture, opts: &ModelOptions, seed: u64) -> Result<ParamStore> {
    arch.validate()?;
    let mut store = ParamStore::new();
    for (name, fan_in, fan_out) in arch.layers(opts) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stable_hash(&name)]));
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let w = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
        let b = (0..fan_out).map(|_| dist.sample(&mut rng)).collect();
        store.insert(format!("{name}.w"), Tensor::from_vec(fan_in, fan_out, w)?)?;
        store.insert(format!("{name}.b"), Tensor::row_vector(b))?;
    }
    Ok(store)
}

/// Trainable scalars in the shared modules (including their target copies).
pub fn shared_param_count(store: &ParamStore) -> usize {
    store.scalar_count(|n| {
        let n = n.strip_prefix(TARGET_PREFIX).unwrap_or(n);
        SHARED_MODULES.iter().any(|m| n.starts_with(&format!("{m}.")))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Reference,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Partial,
    Mask,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderHead {
    Main,
    Aux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Relu,
    Leaky,
    Linear,
}

/// Stateless view of the architecture; parameters live in the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    pub arch: ModelArchitecture,
    pub no_share: bool,
}

impl Model {
    pub fn new(arch: ModelArchitecture, no_share: bool) -> Result<Self> {
        arch.validate()?;
        Ok(Model { arch, no_share })
    }

    fn shared(&self, module: &str, branch: Branch) -> String {
        match (self.no_share, branch) {
            (true, Branch::Target) => format!("{TARGET_PREFIX}{module}"),
            _ => module.to_string(),
        }
    }

    fn dense(&self, g: &mut Graph, s: &ParamStore, x: NodeId, layer: &str, act: Act) -> Result<NodeId> {
        let w = g.param(s, &format!("{layer}.w"))?;
        let b = g.param(s, &format!("{layer}.b"))?;
        let y = g.linear(x, w, b)?;
        match act {
            Act::Relu => g.relu(y),
            Act::Leaky => g.leaky_relu(y, LEAKY_SLOPE),
            Act::Linear => Ok(y),
        }
    }

    fn mlp(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        mut x: NodeId,
        prefix: &str,
        layers: usize,
        hidden: Act,
        last: Act,
    ) -> Result<NodeId> {
        for i in 0..layers {
            let act = if i + 1 == layers { last } else { hidden };
            x = self.dense(g, s, x, &format!("{prefix}.l{i}"), act)?;
        }
        Ok(x)
    }

    /// Shared per-point layers with ReLU, then max over points: `n x 3 -> 1 x latent`.
    pub fn encode(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        kind: EncoderKind,
        branch: Branch,
        cloud: NodeId,
    ) -> Result<NodeId> {
        let (prefix, n) = match kind {
            EncoderKind::Partial => (self.shared("enc_p", branch), self.arch.partial_points),
            EncoderKind::Mask => ("enc_m".to_string(), self.arch.partial_points),
            EncoderKind::Complete => ("enc_c".to_string(), self.arch.complete_points),
        };
        let shape = g.shape(cloud);
        if shape != [n, 3] {
            return Err(Error::shape(kind_name(kind), &shape, &[n, 3]));
        }
        let layers = self.arch.encoder.len() - 1;
        let h = self.mlp(g, s, cloud, &prefix, layers, Act::Relu, Act::Relu)?;
        g.max_rows(h)
    }

    /// Encodes each cloud and stacks the features: `B x latent`.
    pub fn encode_batch(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        kind: EncoderKind,
        branch: Branch,
        clouds: &[NodeId],
    ) -> Result<NodeId> {
        let rows = clouds
            .iter()
            .map(|&c| self.encode(g, s, kind, branch, c))
            .collect::<Result<Vec<_>>>()?;
        g.concat_rows(&rows)
    }

    fn residual(&self, g: &mut Graph, s: &ParamStore, x: NodeId, layer: &str) -> Result<NodeId> {
        let r = self.dense(g, s, x, layer, Act::Relu)?;
        g.add(x, r)
    }

    /// Latent fusion on row batches: `h = R^5(lift_p z_p)`, `m = lift_m z_m`,
    /// `f = R(proj1[h, m]) + m`, `out = W_out(proj2[f, h] + h)`.
    pub fn lsfm(&self, g: &mut Graph, s: &ParamStore, branch: Branch, zp: NodeId, zm: NodeId) -> Result<NodeId> {
        let l = self.arch.latent();
        let (sp, sm) = (g.shape(zp), g.shape(zm));
        if sp[1] != l || sm[1] != l || sp[0] != sm[0] {
            return Err(Error::shape("lsfm", &sp, &sm));
        }
        let p = self.shared("lsfm", branch);
        let mut h = self.dense(g, s, zp, &format!("{p}.lift_p"), Act::Linear)?;
        for i in 0..self.arch.residual_blocks {
            h = self.residual(g, s, h, &format!("{p}.res{i}"))?;
        }
        let m = self.dense(g, s, zm, &format!("{p}.lift_m"), Act::Linear)?;
        let hm = g.concat_cols(&[h, m])?;
        let f = self.dense(g, s, hm, &format!("{p}.proj1"), Act::Linear)?;
        let f = self.residual(g, s, f, &format!("{p}.fuse_res"))?;
        let f = g.add(f, m)?;
        let fh = g.concat_cols(&[f, h])?;
        let f2 = self.dense(g, s, fh, &format!("{p}.proj2"), Act::Linear)?;
        let f2 = g.add(f2, h)?;
        self.dense(g, s, f2, &format!("{p}.out"), Act::Linear)
    }

    /// `B x latent -> B x 3n`, ReLU hidden layers and a linear output.
    pub fn decode(&self, g: &mut Graph, s: &ParamStore, head: DecoderHead, branch: Branch, z: NodeId) -> Result<NodeId> {
        let sz = g.shape(z);
        if sz[1] != self.arch.latent() {
            return Err(Error::shape("decode", &sz, &[sz[0], self.arch.latent()]));
        }
        let prefix = match head {
            DecoderHead::Main => self.shared("dec_c", branch),
            DecoderHead::Aux => "dec_r".to_string(),
        };
        self.mlp(g, s, z, &prefix, self.arch.decoder.len() - 1, Act::Relu, Act::Linear)
    }

    /// Row `item` of a decoder output as an `n x 3` cloud node.
    pub fn cloud_of(&self, g: &mut Graph, decoded: NodeId, item: usize) -> Result<NodeId> {
        let row = g.gather_rows(decoded, &[item])?;
        g.reshape(row, self.arch.complete_points, 3)
    }

    /// Raw scores `B x 1` for latent features.
    pub fn discriminate_latent(&self, g: &mut Graph, s: &ParamStore, z: NodeId) -> Result<NodeId> {
        let sz = g.shape(z);
        if sz[1] != self.arch.latent() {
            return Err(Error::shape("discriminate_latent", &sz, &[sz[0], self.arch.latent()]));
        }
        self.mlp(g, s, z, "disc_lat", self.arch.latent_disc.len() - 1, Act::Leaky, Act::Linear)
    }

    /// Raw `1 x 1` score for an `n x 3` cloud of any size.
    pub fn discriminate_cloud(&self, g: &mut Graph, s: &ParamStore, cloud: NodeId) -> Result<NodeId> {
        let sc = g.shape(cloud);
        if sc[1] != 3 || sc[0] == 0 {
            return Err(Error::shape("discriminate_cloud", &sc, &[sc[0].max(1), 3]));
        }
        let n = self.arch.cloud_disc_point.len() - 1;
        let h = self.mlp(g, s, cloud, "disc_pc.point", n, Act::Leaky, Act::Leaky)?;
        let pooled = g.max_rows(h)?;
        let n = self.arch.cloud_disc_head.len() - 1;
        self.mlp(g, s, pooled, "disc_pc.head", n, Act::Leaky, Act::Linear)
    }

    /// `D_c(T(E_p(p_x), z_mask))` for one target cloud, `n x 3`.
    pub fn complete(&self, g: &mut Graph, s: &ParamStore, partial: NodeId, z_mask: NodeId) -> Result<NodeId> {
        let zp = self.encode(g, s, EncoderKind::Partial, Branch::Target, partial)?;
        let z = self.lsfm(g, s, Branch::Target, zp, z_mask)?;
        let out = self.decode(g, s, DecoderHead::Main, Branch::Target, z)?;
        self.cloud_of(g, out, 0)
    }

    /// Forward-only completion of an in-memory partial guided by a mask cloud.
    pub fn complete_cloud(&self, s: &ParamStore, partial: &PointCloud, mask: &PointCloud) -> Result<PointCloud> {
        let mut g = Graph::new();
        let p = g.constant(cloud_tensor(partial));
        let m = g.constant(cloud_tensor(mask));
        let zm = self.encode(&mut g, s, EncoderKind::Mask, Branch::Target, m)?;
        let out = self.complete(&mut g, s, p, zm)?;
        PointCloud::from_flat(g.value(out).data())
    }
}

fn kind_name(kind: EncoderKind) -> &'static str {
    match kind {
        EncoderKind::Partial => "encode_partial",
        EncoderKind::Mask => "encode_mask",
        EncoderKind::Complete => "encode_complete",
    }
}

pub fn cloud_tensor(c: &PointCloud) -> Tensor {
    Tensor::from_vec(c.len(), 3, c.to_flat()).expect("n x 3")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOptions};
    use rand::Rng;

    fn toy() -> (Model, ParamStore) {
        let arch = ModelArchitecture::toy();
        let opts = ModelOptions {
            no_share: false,
            discriminators: true,
        };
        let store = init_params(&arch, &opts, 3).unwrap();
        (Model::new(arch, false).unwrap(), store)
    }

    fn rand_cloud(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        Tensor::from_vec(n, 3, (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn permuted(t: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
        let mut idx: Vec<usize> = (0..t.rows()).collect();
        rand::seq::SliceRandom::shuffle(&mut idx[..], rng);
        let data = idx.iter().flat_map(|&i| t.row(i).to_vec()).collect();
        Tensor::from_vec(t.rows(), t.cols(), data).unwrap()
    }

    #[test]
    fn presets_validate() {
        for name in ["full", "desk", "toy"] {
            ModelArchitecture::preset(name).unwrap().validate().unwrap();
        }
        let mut a = ModelArchitecture::toy();
        a.decoder.push(5);
        assert!(a.validate().is_err());
    }

    #[test]
    fn encoders_are_permutation_invariant() {
        let (m, s) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (kind, n) in [
            (EncoderKind::Partial, 16),
            (EncoderKind::Mask, 16),
            (EncoderKind::Complete, 32),
        ] {
            let c = rand_cloud(&mut rng, n);
            let pc = permuted(&c, &mut rng);
            let mut g = Graph::new();
            let (a, b) = (g.constant(c), g.constant(pc));
            let za = m.encode(&mut g, &s, kind, Branch::Reference, a).unwrap();
            let zb = m.encode(&mut g, &s, kind, Branch::Reference, b).unwrap();
            for (x, y) in g.value(za).data().iter().zip(g.value(zb).data()) {
                assert!((x - y).abs() <= 1e-9);
            }
            let wrong = g.constant(Tensor::zeros(n + 1, 3));
            assert!(matches!(
                m.encode(&mut g, &s, kind, Branch::Reference, wrong),
                Err(Error::Shape { .. })
            ));
        }
        let c = rand_cloud(&mut rng, 20);
        let pc = permuted(&c, &mut rng);
        let mut g = Graph::new();
        let (a, b) = (g.constant(c), g.constant(pc));
        let sa = m.discriminate_cloud(&mut g, &s, a).unwrap();
        let sb = m.discriminate_cloud(&mut g, &s, b).unwrap();
        assert!((g.value(sa).item() - g.value(sb).item()).abs() <= 1e-9);
    }

    #[test]
    fn zero_cloud_with_zero_biases() {
        let (m, mut s) = toy();
        for p in s.iter_mut() {
            if p.name.starts_with("enc_p") && p.name.ends_with(".b") {
                p.value_mut().fill(0.0);
            }
        }
        let mut g = Graph::new();
        let c = g.constant(Tensor::zeros(16, 3));
        let z = m.encode(&mut g, &s, EncoderKind::Partial, Branch::Reference, c).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_discriminators_score_zero() {
        let (m, mut s) = toy();
        for p in s.iter_mut() {
            if p.name.starts_with("disc") {
                p.value_mut().fill(0.0);
            }
        }
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = g.constant(rand_cloud(&mut rng, 9));
        let z = g.constant(Tensor::filled(3, 8, 0.7));
        let sc = m.discriminate_cloud(&mut g, &s, c).unwrap();
        let sl = m.discriminate_latent(&mut g, &s, z).unwrap();
        assert_eq!(g.value(sc).item(), 0.0);
        assert_eq!(g.shape(sl), [3, 1]);
        assert!(g.value(sl).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shapes_and_determinism() {
        let (m, s) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PointCloud::from_flat(rand_cloud(&mut rng, 16).data()).unwrap();
        let mask = PointCloud::from_flat(rand_cloud(&mut rng, 16).data()).unwrap();
        let a = m.complete_cloud(&s, &p, &mask).unwrap();
        let b = m.complete_cloud(&s, &p, &mask).unwrap();
        assert_eq!(a.len(), 32);
        assert_eq!(a, b);
        let mut g = Graph::new();
        let zp = g.constant(Tensor::filled(2, 8, 0.1));
        let zm = g.constant(Tensor::filled(2, 8, -0.3));
        let z = m.lsfm(&mut g, &s, Branch::Reference, zp, zm).unwrap();
        assert_eq!(g.shape(z), [2, 8]);
        let bad = g.constant(Tensor::zeros(2, 7));
        assert!(m.lsfm(&mut g, &s, Branch::Reference, zp, bad).is_err());
        assert!(m.decode(&mut g, &s, DecoderHead::Aux, Branch::Reference, bad).is_err());
        let d = m.decode(&mut g, &s, DecoderHead::Aux, Branch::Reference, z).unwrap();
        assert_eq!(g.shape(d), [2, 96]);
    }

    #[test]
    fn branch_weight_identity_and_no_share() {
        let arch = ModelArchitecture::toy();
        let shared = Model::new(arch.clone(), false).unwrap();
        let split = Model::new(arch.clone(), true).unwrap();
        let s1 = init_params(&arch, &ModelOptions::default(), 0).unwrap();
        let s2 = init_params(&arch, &ModelOptions { no_share: true, discriminators: false }, 0).unwrap();
        let touched = |m: &Model, s: &ParamStore, b: Branch| {
            let mut g = Graph::new();
            let p = g.constant(Tensor::filled(16, 3, 0.2));
            let zm = g.constant(Tensor::filled(1, 8, 0.1));
            let zp = m.encode(&mut g, s, EncoderKind::Partial, b, p).unwrap();
            let z = m.lsfm(&mut g, s, b, zp, zm).unwrap();
            m.decode(&mut g, s, DecoderHead::Main, b, z).unwrap();
            g.touched_params().clone()
        };
        assert_eq!(
            touched(&shared, &s1, Branch::Reference),
            touched(&shared, &s1, Branch::Target)
        );
        let (r, t) = (touched(&split, &s2, Branch::Reference), touched(&split, &s2, Branch::Target));
        assert!(r.is_disjoint(&t));
        assert_eq!(r.len(), t.len());

        let mlp = |w: &[usize]| w.windows(2).map(|p| p[0] * p[1] + p[1]).sum::<usize>();
        let (l, h) = (arch.latent(), arch.lsfm_width);
        let lsfm = 2 * (l * h + h) + (arch.residual_blocks + 1) * (h * h + h) + 2 * (2 * h * h + h) + h * l + l;
        let trio = mlp(&arch.encoder) + lsfm + mlp(&arch.decoder);
        assert_eq!(shared_param_count(&s1), trio);
        assert_eq!(shared_param_count(&s2), 2 * trio);
    }

    fn check(f: impl Fn(&mut Graph, &ParamStore) -> Result<NodeId>) {
        let (_, mut s) = toy();
        let r = grad_check(f, &mut s, &GradCheckOptions { max_entries_per_param: 6, ..Default::default() }).unwrap();
        assert!(r.passed, "{r:?}");
    }

    fn head(g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let sq = g.square(x)?;
        let m = g.mean(sq)?;
        let s = g.sum(x)?;
        g.add(m, s)
    }

    #[test]
    fn components_match_finite_differences() {
        let (m, _) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c16 = rand_cloud(&mut rng, 16);
        let c32 = rand_cloud(&mut rng, 32);
        for kind in [EncoderKind::Partial, EncoderKind::Mask, EncoderKind::Complete] {
            let c = if kind == EncoderKind::Complete { c32.clone() } else { c16.clone() };
            check(|g, s| {
                let x = g.constant(c.clone());
                let z = m.encode(g, s, kind, Branch::Reference, x)?;
                head(g, z)
            });
        }
        let zin = Tensor::from_vec(2, 8, (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        check(|g, s| {
            let zp = g.constant(zin.clone());
            let zm = g.constant(zin.clone());
            let z = m.lsfm(g, s, Branch::Reference, zp, zm)?;
            head(g, z)
        });
        for h in [DecoderHead::Main, DecoderHead::Aux] {
            check(|g, s| {
                let z = g.constant(zin.clone());
                let d = m.decode(g, s, h, Branch::Reference, z)?;
                let c = m.cloud_of(g, d, 1)?;
                let t = g.constant(c32.clone());
                crate::losses::cd_loss(g, c, t)
            });
        }
        check(|g, s| {
            let z = g.constant(zin.clone());
            let sc = m.discriminate_latent(g, s, z)?;
            head(g, sc)
        });
        check(|g, s| {
            let x = g.constant(c16.clone());
            let sc = m.discriminate_cloud(g, s, x)?;
            head(g, sc)
        });
    }
}
