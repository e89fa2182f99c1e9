use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use vocadapt::bpe::{DEFAULT_DOMAIN_VOCAB_SIZE, DEFAULT_MIN_PAIR_FREQ};
use vocadapt::embed::DEFAULT_TEST_DIM;
use vocadapt::reg::gradcheck::run_grad_check;
use vocadapt::reg::{
    contrastive_reg, forward_backward, DualBatch, EncoderStandIn, LossConfig, LossForm, Pooling,
    DEFAULT_BATCH_SIZE, DEFAULT_LAMBDA, DEFAULT_TAU,
};
use vocadapt::{
    adapt_fixed, adapt_vocabulary, init_added_embeddings, load_corpus, load_embeddings,
    load_merges, load_vocab, pre_tokenize, save_embeddings, save_merges, save_vocab,
    tokenization_diff, tokenize_corpus, train_bpe, AdaptConfig, BpeConfig, CorpusFormat, DiffRow,
    DomainVocab, EmbeddingTable, PreTokenizeOptions, PreTokenizedCorpus, VocabLabel, Vocabulary,
};

use crate::manifest::RunManifest;
use crate::{print_json, write_json, UsageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// One document per line.
    Plain,
    /// One JSON object per line; see --field.
    Jsonl,
}

/// How corpus files are read and split into words.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TextArgs {
    #[arg(long, value_enum, default_value_t = Format::Plain)]
    pub format: Format,
    /// Field holding the document text in JSONL records.
    #[arg(long, default_value = "text")]
    pub field: String,
    /// Do not lowercase.
    #[arg(long)]
    pub keep_case: bool,
    /// Do not split punctuation off words.
    #[arg(long)]
    pub no_split_punct: bool,
    /// Drop punctuation instead of keeping it as separate words.
    #[arg(long)]
    pub drop_punct: bool,
}

impl TextArgs {
    fn load(&self, path: &Path) -> anyhow::Result<PreTokenizedCorpus> {
        let format = match self.format {
            Format::Plain => CorpusFormat::PlainLines,
            Format::Jsonl => CorpusFormat::JsonlField(self.field.clone()),
        };
        let raw = load_corpus(path, &format)?;
        let opts = PreTokenizeOptions {
            lowercase: !self.keep_case,
            split_punct: !self.no_split_punct,
            keep_punct: !self.drop_punct,
        };
        Ok(pre_tokenize(&raw, &opts)?)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub text: TextArgs,
    /// Domain vocabulary size, counting the unknown token and the alphabet.
    #[arg(long, default_value_t = DEFAULT_DOMAIN_VOCAB_SIZE)]
    pub size: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_PAIR_FREQ)]
    pub min_pair_freq: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train_domain_vocab(args: &TrainArgs) -> anyhow::Result<()> {
    let corpus = args.text.load(&args.corpus)?;
    let cfg = BpeConfig {
        target_size: args.size,
        min_pair_freq: args.min_pair_freq,
    };
    let (dv, merges) = train_bpe(&corpus, &cfg)?;
    create_dir(&args.out)?;
    save_vocab(&dv.vocab, args.out.join("domain_vocab.txt"))?;
    save_merges(&merges, args.out.join("merges.txt"))?;

    let mut manifest = RunManifest::new("train-domain-vocab", args)?;
    manifest.input(&args.corpus)?;
    manifest.write(&args.out.join("manifest.json"))?;
    log::info!(
        "domain vocabulary: {} tokens, {} merges",
        dv.vocab.len(),
        merges.len()
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct AdaptArgs {
    #[arg(long)]
    pub pretrained_vocab: PathBuf,
    /// Domain vocabulary as written by train-domain-vocab.
    #[arg(long)]
    pub domain_vocab: PathBuf,
    /// Merge list to check the domain vocabulary against.
    #[arg(long)]
    pub merges: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub text: TextArgs,
    #[arg(long, default_value_t = vocadapt::adapter::DEFAULT_ALPHA)]
    pub alpha: usize,
    #[arg(long, default_value_t = vocadapt::adapter::DEFAULT_BETA)]
    pub beta: usize,
    #[arg(long, default_value_t = vocadapt::adapter::DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Add exactly this many domain tokens and skip the score guard.
    #[arg(long)]
    pub n_override: Option<usize>,
    /// Rows in the diff written next to the adapted vocabulary.
    #[arg(long, default_value_t = 50)]
    pub diff_top: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn adapt(args: &AdaptArgs) -> anyhow::Result<()> {
    let pretrained = load_vocab(&args.pretrained_vocab, VocabLabel::Pretrained)?;
    let domain = DomainVocab::from_vocab(load_vocab(&args.domain_vocab, VocabLabel::Domain)?);
    if let Some(path) = &args.merges {
        domain.check_against(&load_merges(path)?)?;
    }
    let corpus = args.text.load(&args.corpus)?;
    let (adapted, report) = match args.n_override {
        Some(n) => adapt_fixed(&pretrained, &domain, &corpus, n)?,
        None => {
            let cfg = AdaptConfig {
                alpha: args.alpha,
                beta: args.beta,
                gamma: args.gamma,
                domain_vocab_size: domain.vocab.len(),
            };
            adapt_vocabulary(&pretrained, &domain, &corpus, &cfg)?
        }
    };

    create_dir(&args.out)?;
    save_vocab(&adapted, args.out.join("adapted_vocab.txt"))?;
    write_json(&args.out.join("adapt_report.json"), &report)?;
    let rows = tokenization_diff(&pretrained, &adapted, &corpus, Some(args.diff_top));
    write_text(&args.out.join("diff.tsv"), &diff_tsv(&rows))?;

    let mut manifest = RunManifest::new("adapt", args)?;
    manifest.input(&args.pretrained_vocab)?;
    manifest.input(&args.domain_vocab)?;
    if let Some(path) = &args.merges {
        manifest.input(path)?;
    }
    manifest.input(&args.corpus)?;
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Serialize)]
struct Totals {
    words: u64,
    subwords: u64,
}

#[derive(Debug, Serialize)]
struct ScoreOutput {
    fragment_score: f64,
    totals: Totals,
    /// Pieces per word to number of word occurrences.
    histogram: BTreeMap<usize, u64>,
}

pub fn score(args: &ScoreArgs) -> anyhow::Result<()> {
    let vocab = load_vocab(&args.vocab, VocabLabel::Pretrained)?;
    let corpus = args.text.load(&args.corpus)?;
    let stats = tokenize_corpus(&vocab, &corpus)?;
    print_json(&ScoreOutput {
        fragment_score: stats.fragment_score(),
        totals: Totals {
            words: stats.total_words,
            subwords: stats.total_subwords,
        },
        histogram: stats.per_word_hist,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffFormat {
    Tsv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct DiffArgs {
    #[arg(long)]
    pub vocab_a: PathBuf,
    #[arg(long)]
    pub vocab_b: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub text: TextArgs,
    /// Keep only the most frequent rows.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long = "output-format", value_enum, default_value_t = DiffFormat::Tsv)]
    pub output_format: DiffFormat,
}

/// `word<TAB>pieces under a<TAB>pieces under b`, one row per line.
fn diff_tsv(rows: &[DiffRow]) -> String {
    rows.iter().map(|r| r.to_tsv() + "\n").collect()
}

pub fn diff(args: &DiffArgs) -> anyhow::Result<()> {
    let a = load_vocab(&args.vocab_a, VocabLabel::Pretrained)?;
    let b = load_vocab(&args.vocab_b, VocabLabel::Adapted)?;
    let corpus = args.text.load(&args.corpus)?;
    let rows = tokenization_diff(&a, &b, &corpus, args.top);
    match args.output_format {
        DiffFormat::Json => print_json(&rows),
        DiffFormat::Tsv => {
            print!("{}", diff_tsv(&rows));
            Ok(())
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Corpus file, optionally `label=path`. Repeat for several corpora.
    #[arg(long = "corpus", required = true)]
    pub corpora: Vec<String>,
    /// Vocabulary file, optionally `label=path`. Repeat for several vocabularies.
    #[arg(long = "vocab", required = true)]
    pub vocabs: Vec<String>,
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Serialize)]
struct Matrix {
    /// Corpus labels.
    rows: Vec<String>,
    /// Vocabulary labels.
    columns: Vec<String>,
    /// `values[i][j]`: fragment score of vocabulary j on corpus i.
    values: Vec<Vec<f64>>,
}

fn labelled(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_owned(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_owned());
            (label, path)
        }
    }
}

pub fn analyze(args: &AnalyzeArgs) -> anyhow::Result<()> {
    let corpora: Vec<(String, PathBuf)> = args.corpora.iter().map(|s| labelled(s)).collect();
    let vocabs: Vec<(String, PathBuf)> = args.vocabs.iter().map(|s| labelled(s)).collect();
    for list in [&corpora, &vocabs] {
        let mut seen = std::collections::HashSet::new();
        if let Some((dup, _)) = list.iter().find(|(l, _)| !seen.insert(l.clone())) {
            return Err(UsageError(format!("duplicate label {dup:?}")).into());
        }
    }
    let loaded: Vec<Vocabulary> = vocabs
        .iter()
        .map(|(_, p)| load_vocab(p, VocabLabel::Pretrained))
        .collect::<Result<_, _>>()?;
    let mut values = Vec::with_capacity(corpora.len());
    for (_, path) in &corpora {
        let corpus = args.text.load(path)?;
        let row = loaded
            .iter()
            .map(|v| Ok(tokenize_corpus(v, &corpus)?.fragment_score()))
            .collect::<anyhow::Result<Vec<f64>>>()?;
        values.push(row);
    }
    print_json(&Matrix {
        rows: corpora.into_iter().map(|(l, _)| l).collect(),
        columns: vocabs.into_iter().map(|(l, _)| l).collect(),
        values,
    })
}

#[derive(Debug, Args, Serialize)]
pub struct InitEmbeddingsArgs {
    /// Embedding table covering the pretrained vocabulary. Without it a
    /// random table is drawn from --seed.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub pretrained_vocab: PathBuf,
    #[arg(long)]
    pub adapted_vocab: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dimension of the random table.
    #[arg(long, default_value_t = DEFAULT_TEST_DIM)]
    pub dim: usize,
    /// Output table; a manifest is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

fn base_table(
    base: Option<&Path>,
    seed: Option<u64>,
    pretrained: &Vocabulary,
    dim: usize,
) -> anyhow::Result<EmbeddingTable> {
    match (base, seed) {
        (Some(path), _) => Ok(load_embeddings(path)?),
        (None, Some(seed)) => Ok(EmbeddingTable::random(pretrained, dim, seed)),
        (None, None) => Err(UsageError("either --base or --seed is required".into()).into()),
    }
}

pub fn init_embeddings(args: &InitEmbeddingsArgs) -> anyhow::Result<()> {
    let pretrained = load_vocab(&args.pretrained_vocab, VocabLabel::Pretrained)?;
    let adapted = load_vocab(&args.adapted_vocab, VocabLabel::Adapted)?;
    let base = base_table(args.base.as_deref(), args.seed, &pretrained, args.dim)?;
    let table = init_added_embeddings(&base, &adapted, &pretrained)?;
    save_embeddings(&table, &args.out)?;

    let mut manifest = RunManifest::new("init-embeddings", args)?;
    if let Some(path) = &args.base {
        manifest.input(path)?;
    }
    manifest.input(&args.pretrained_vocab)?;
    manifest.input(&args.adapted_vocab)?;
    let mut name = args.out.as_os_str().to_owned();
    name.push(".manifest.json");
    manifest.write(Path::new(&name))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingArg {
    Mean,
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormArg {
    PerSample,
    Literal,
}

#[derive(Debug, Args, Serialize)]
pub struct DemoLossArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub text: TextArgs,
    #[arg(long)]
    pub pretrained_vocab: PathBuf,
    #[arg(long)]
    pub adapted_vocab: PathBuf,
    /// Table covering the pretrained (or adapted) vocabulary. Missing rows for
    /// added tokens are filled by mean-of-pieces initialization. Without it a
    /// random table is drawn from --seed.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Seeds labels, classifier weights and any random table.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = DEFAULT_TEST_DIM)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = PoolingArg::Mean)]
    pub pooling: PoolingArg,
    /// Regularizer form used in `total`.
    #[arg(long, value_enum, default_value_t = FormArg::PerSample)]
    pub form: FormArg,
}

#[derive(Debug, Serialize)]
struct DemoLossOutput {
    ce: f64,
    reg_per_sample: f64,
    reg_literal: f64,
    form: FormArg,
    total: f64,
}

pub fn demo_loss(args: &DemoLossArgs) -> anyhow::Result<()> {
    if args.batch_size == 0 {
        return Err(UsageError("--batch-size must be positive".into()).into());
    }
    if args.classes < 2 {
        return Err(UsageError("--classes must be at least 2".into()).into());
    }
    let pretrained = load_vocab(&args.pretrained_vocab, VocabLabel::Pretrained)?;
    let adapted = load_vocab(&args.adapted_vocab, VocabLabel::Adapted)?;
    let corpus = args.text.load(&args.corpus)?;

    let table = match &args.embeddings {
        Some(path) => {
            let table = load_embeddings(path)?;
            if table.covers(&adapted) {
                table
            } else {
                init_added_embeddings(&table, &adapted, &pretrained)?
            }
        }
        None => {
            let base = base_table(None, Some(args.seed), &pretrained, args.dim)?;
            init_added_embeddings(&base, &adapted, &pretrained)?
        }
    };

    let sentences: Vec<Vec<String>> = corpus
        .sentences()
        .iter()
        .filter(|s| !s.is_empty())
        .take(args.batch_size)
        .cloned()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let labels: Vec<usize> = sentences
        .iter()
        .map(|_| rng.gen_range(0..args.classes))
        .collect();
    let batch = DualBatch::from_sentences(&sentences, &labels, &pretrained, &adapted)?;

    let dim = table.dim();
    let classifier = (0..dim)
        .map(|_| {
            (0..args.classes)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let enc = EncoderStandIn {
        embeddings: table,
        classifier: Some(classifier),
        pooling: match args.pooling {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::First => Pooling::First,
        },
    };

    let form = match args.form {
        FormArg::PerSample => LossForm::PerSample,
        FormArg::Literal => LossForm::LogOfSum,
    };
    let cfg = LossConfig {
        tau: args.tau,
        lambda: args.lambda,
        form,
        ..LossConfig::default()
    };
    cfg.validate()?;
    let out = forward_backward(&batch, &enc, &cfg)?;

    let (h_a, h_p) = pooled(&batch, &enc)?;
    let reg_per_sample = contrastive_reg(&h_a, &h_p, cfg.tau, LossForm::PerSample)?;
    let reg_literal = contrastive_reg(&h_a, &h_p, cfg.tau, LossForm::LogOfSum)?;
    print_json(&DemoLossOutput {
        ce: out.ce,
        reg_per_sample,
        reg_literal,
        form: args.form,
        total: out.loss,
    })
}

type Rows = Vec<Vec<f64>>;

/// Pooled adapted-side and pretrained-side representations of every item.
fn pooled(batch: &DualBatch, enc: &EncoderStandIn) -> anyhow::Result<(Rows, Rows)> {
    let mut h_a = Vec::with_capacity(batch.len());
    let mut h_p = Vec::with_capacity(batch.len());
    for item in &batch.items {
        h_a.push(enc.represent(&item.pieces_adapted)?);
        h_p.push(enc.represent(&item.pieces_pretrained)?);
    }
    Ok((h_a, h_p))
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
}

pub fn grad_check(args: &GradCheckArgs) -> anyhow::Result<()> {
    let report = run_grad_check(args.instances, args.seed)?;
    print_json(&report)?;
    if report.pass {
        Ok(())
    } else {
        Err(crate::CheckFailed.into())
    }
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
