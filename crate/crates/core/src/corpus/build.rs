use std::collections::HashSet;
use std::path::{Path, PathBuf};

use log::info;

use super::grammar::{gen_domain_texts, word_bigrams, DomainGrammar};
use super::manifest::{Manifest, ManifestRecord};
use super::render::{derive_seed, nearest_prototype_accuracy, render_speech, RendererParams};
use crate::error::{Error, Result};
use crate::features::{write_features, Modality, SymbolTable};

const SHIPPED_SPEC: &str = include_str!("../../data/corpus.spec");
const SHIPPED_GRAMMAR_A: &str = include_str!("../../data/domain_a.grammar");
const SHIPPED_GRAMMAR_B: &str = include_str!("../../data/domain_b.grammar");

pub const SPLITS: [&str; 5] = ["train-a", "dev-a", "adapt-b", "test-b", "dev-b"];

/// Everything that determines a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub grammar_a: DomainGrammar,
    pub grammar_b: DomainGrammar,
    grammar_a_text: String,
    grammar_b_text: String,
    pub train_a: usize,
    pub dev_a: usize,
    pub adapt_b: usize,
    pub test_b: usize,
    pub dev_b: usize,
    pub feature_width: usize,
    pub d_min: usize,
    pub d_max: usize,
    pub sigma: f32,
    pub offset_scale: f32,
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("corpus spec: cannot parse {key}={v:?}")))
}

impl CorpusSpec {
    /// The default spec and grammars compiled into the library.
    pub fn shipped() -> Self {
        Self::parse_with(SHIPPED_SPEC, |name| match name {
            "domain_a.grammar" => Ok(SHIPPED_GRAMMAR_A.to_string()),
            "domain_b.grammar" => Ok(SHIPPED_GRAMMAR_B.to_string()),
            other => Err(Error::Config(format!("unknown shipped grammar {other}"))),
        })
        .expect("shipped corpus spec is valid")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_with(&text, |name| {
            let p = base.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        })
    }

    pub fn parse_with(text: &str, load: impl Fn(&str) -> Result<String>) -> Result<Self> {
        let mut spec = CorpusSpec {
            seed: 0,
            grammar_a: DomainGrammar::parse("a", "x\n")?,
            grammar_b: DomainGrammar::parse("b", "x\n")?,
            grammar_a_text: String::new(),
            grammar_b_text: String::new(),
            train_a: 400,
            dev_a: 50,
            adapt_b: 300,
            test_b: 50,
            dev_b: 25,
            feature_width: 16,
            d_min: 3,
            d_max: 6,
            sigma: 0.5,
            offset_scale: 0.3,
        };
        let (mut ga, mut gb) = (None, None);
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("corpus spec: malformed line {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "seed" => spec.seed = parse_value(k, v)?,
                "grammar_a" => ga = Some(v.to_string()),
                "grammar_b" => gb = Some(v.to_string()),
                "train_a" => spec.train_a = parse_value(k, v)?,
                "dev_a" => spec.dev_a = parse_value(k, v)?,
                "adapt_b" => spec.adapt_b = parse_value(k, v)?,
                "test_b" => spec.test_b = parse_value(k, v)?,
                "dev_b" => spec.dev_b = parse_value(k, v)?,
                "feature_width" => spec.feature_width = parse_value(k, v)?,
                "d_min" => spec.d_min = parse_value(k, v)?,
                "d_max" => spec.d_max = parse_value(k, v)?,
                "sigma" => spec.sigma = parse_value(k, v)?,
                "offset_scale" => spec.offset_scale = parse_value(k, v)?,
                other => return Err(Error::Config(format!("corpus spec: unknown key {other:?}"))),
            }
        }
        let ga = ga.ok_or_else(|| Error::Config("corpus spec lacks grammar_a".into()))?;
        let gb = gb.ok_or_else(|| Error::Config("corpus spec lacks grammar_b".into()))?;
        spec.grammar_a_text = load(&ga)?;
        spec.grammar_b_text = load(&gb)?;
        spec.grammar_a = DomainGrammar::parse("a", &spec.grammar_a_text)?;
        spec.grammar_b = DomainGrammar::parse("b", &spec.grammar_b_text)?;
        Ok(spec)
    }

    /// Same spec with all split sizes scaled down (for quick runs and tests).
    pub fn with_sizes(mut self, train_a: usize, dev_a: usize, adapt_b: usize, test_b: usize, dev_b: usize) -> Self {
        self.train_a = train_a;
        self.dev_a = dev_a;
        self.adapt_b = adapt_b;
        self.test_b = test_b;
        self.dev_b = dev_b;
        self
    }

    pub fn to_text(&self) -> String {
        format!(
            "seed={}\ngrammar_a=domain_a.grammar\ngrammar_b=domain_b.grammar\ntrain_a={}\ndev_a={}\n\
             adapt_b={}\ntest_b={}\ndev_b={}\nfeature_width={}\nd_min={}\nd_max={}\nsigma={}\noffset_scale={}\n",
            self.seed,
            self.train_a,
            self.dev_a,
            self.adapt_b,
            self.test_b,
            self.dev_b,
            self.feature_width,
            self.d_min,
            self.d_max,
            self.sigma,
            self.offset_scale
        )
    }

    pub fn renderer(&self, table: &SymbolTable) -> Result<RendererParams> {
        RendererParams::generate(
            table,
            self.feature_width,
            (self.d_min, self.d_max),
            self.sigma,
            self.offset_scale,
            self.seed,
        )
    }
}

/// Sentences of every split, before rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusTexts {
    pub train_a: Vec<String>,
    pub dev_a: Vec<String>,
    pub adapt_b: Vec<String>,
    pub test_b: Vec<String>,
    pub dev_b: Vec<String>,
}

/// Draws held-out sentences that never occur verbatim in `exclude`.
fn held_out(grammar: &DomainGrammar, n: usize, seed: u64, exclude: &HashSet<&String>) -> Result<Vec<String>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * (n + 1) {
            return Err(Error::Config(format!(
                "grammar {} cannot supply {n} sentences outside the adaptation set",
                grammar.name
            )));
        }
        let s = grammar.sample(&mut rng);
        if !exclude.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

pub fn corpus_texts(spec: &CorpusSpec) -> Result<CorpusTexts> {
    let s = spec.seed;
    let gen = |g: &DomainGrammar, n: usize, name: &str| -> Result<Vec<String>> {
        if n == 0 {
            Ok(Vec::new())
        } else {
            gen_domain_texts(g, n, derive_seed(s, name))
        }
    };
    let adapt_b = gen(&spec.grammar_b, spec.adapt_b, "adapt-b")?;
    let exclude: HashSet<&String> = adapt_b.iter().collect();
    Ok(CorpusTexts {
        train_a: gen(&spec.grammar_a, spec.train_a, "train-a")?,
        dev_a: gen(&spec.grammar_a, spec.dev_a, "dev-a")?,
        test_b: held_out(&spec.grammar_b, spec.test_b, derive_seed(s, "test-b"), &exclude)?,
        dev_b: held_out(&spec.grammar_b, spec.dev_b, derive_seed(s, "dev-b"), &exclude)?,
        adapt_b,
    })
}

#[derive(Clone, Debug)]
pub struct CorpusSummary {
    pub manifests: Vec<(String, PathBuf, usize)>,
    pub adapt_text: PathBuf,
    pub min_prototype_distance: f32,
    pub oracle_accuracy: f64,
    pub dev_b_bigram_overlap: f64,
}

/// Fraction of the distinct bigrams of `b` that also occur in `a`.
pub fn bigram_overlap(a: &[String], b: &[String]) -> f64 {
    let ba = word_bigrams(a);
    let bb = word_bigrams(b);
    if bb.is_empty() {
        return 0.0;
    }
    bb.iter().filter(|x| ba.contains(*x)).count() as f64 / bb.len() as f64
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes every split's manifest and feature files under `out_dir`.
pub fn build_corpus(spec: &CorpusSpec, table: &SymbolTable, out_dir: &Path) -> Result<CorpusSummary> {
    spec.grammar_a.check_alphabet(table)?;
    spec.grammar_b.check_alphabet(table)?;
    let renderer = spec.renderer(table)?;
    let texts = corpus_texts(spec)?;

    let feat_dir = out_dir.join("feats");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    write(&out_dir.join("corpus.spec"), &spec.to_text())?;
    write(&out_dir.join("domain_a.grammar"), &spec.grammar_a_text)?;
    write(&out_dir.join("domain_b.grammar"), &spec.grammar_b_text)?;

    let splits: [(&str, &Vec<String>, Modality); 5] = [
        ("train-a", &texts.train_a, Modality::Speech),
        ("dev-a", &texts.dev_a, Modality::Speech),
        ("adapt-b", &texts.adapt_b, Modality::Text),
        ("test-b", &texts.test_b, Modality::Speech),
        ("dev-b", &texts.dev_b, Modality::Speech),
    ];
    let mut manifests = Vec::new();
    for (name, sentences, modality) in splits {
        let mut records = Vec::with_capacity(sentences.len());
        for (i, text) in sentences.iter().enumerate() {
            let id = format!("{name}-{i:04}");
            let features = if modality == Modality::Speech {
                let seq = render_speech(text, table, &renderer, derive_seed(spec.seed, &id))?;
                let rel = PathBuf::from("feats").join(format!("{id}.feat"));
                write_features(&out_dir.join(&rel), &seq)?;
                Some(rel)
            } else {
                None
            };
            records.push(ManifestRecord {
                id,
                modality,
                text: text.clone(),
                features,
            });
        }
        let m = Manifest::new(records, out_dir)?;
        let path = out_dir.join(format!("{name}.tsv"));
        m.write(&path)?;
        info!("wrote {} ({} records)", path.display(), m.len());
        manifests.push((name.to_string(), path, m.len()));
    }
    let adapt_text = out_dir.join("adapt-b.txt");
    write(
        &adapt_text,
        &texts.adapt_b.iter().map(|s| format!("{s}\n")).collect::<String>(),
    )?;

    let mut oracle = renderer.clone();
    oracle.sigma = 0.1;
    oracle.offset_scale = 0.0;
    let probe: Vec<String> = texts.train_a.iter().take(20).cloned().collect();
    let oracle_accuracy = nearest_prototype_accuracy(&probe, table, &oracle, spec.seed)?;
    Ok(CorpusSummary {
        manifests,
        adapt_text,
        min_prototype_distance: renderer.min_prototype_distance(),
        oracle_accuracy,
        dev_b_bigram_overlap: bigram_overlap(&texts.train_a, &texts.dev_b),
    })
}
