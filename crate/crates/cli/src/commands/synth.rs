use std::path::Path;

use metachex::synthetic::{write_corpus, SyntheticSpec};

use super::Outcome;
use crate::error::Result;
use crate::io::write_file;

pub struct SynthArgs {
    pub patients: usize,
    pub images_per_patient: usize,
    pub image_size: usize,
    pub shenzhen: [usize; 2],
    pub montgomery: [usize; 2],
    pub seed: u64,
}

// Shares of each class for TB train / validation / test; whatever rounding
// leaves over stays unassigned.
fn tb_plan(n: usize) -> [usize; 3] {
    let val = n / 5;
    [n - 2 * val, val, val]
}

fn config_text(args: &SynthArgs) -> String {
    let [nn, np] = args.shenzhen;
    let (neg, pos) = (tb_plan(nn), tb_plan(np));
    let size = args.image_size;
    format!(
        r#"# Desk-scale run on the synthetic corpus in this directory.
seed = {seed}
output_dir = "run"

[data]
metadata = "chestxray14/metadata.csv"
images = "chestxray14/images"
shenzhen = "shenzhen"
montgomery = "montgomery"

[split]
fractions = [0.6, 0.2, 0.2]
tb_train = [{n0}, {p0}]
tb_validation = [{n1}, {p1}]
tb_test = [{n2}, {p2}]

[model]
variant = "metachexnet"

[model.backbone]
family = "tiny_test_cnn"
feature_dim = 32

[preprocess]
target_size = [{size}, {size}]

[train.phase1]
batch_size = 8
max_epochs = 4
cache_images = true

[train.phase2]
batch_size = 8
max_epochs = 12
selection_metric = "val_auc"
cache_images = true

[analysis]
l2_strength = 1.0
batch_size = 16

[analysis.tsne]
perplexity = 5.0
iterations = 300
"#,
        seed = args.seed,
        n0 = neg[0],
        p0 = pos[0],
        n1 = neg[1],
        p1 = pos[1],
        n2 = neg[2],
        p2 = pos[2],
    )
}

pub fn run(out: &Path, args: &SynthArgs) -> Result<Outcome> {
    let spec = SyntheticSpec {
        patients: args.patients,
        max_images_per_patient: args.images_per_patient,
        image_size: args.image_size,
        seed: args.seed,
        ..Default::default()
    };
    let paths = write_corpus(out, &spec, (args.shenzhen[0], args.shenzhen[1]), (args.montgomery[0], args.montgomery[1]))?;
    let config = out.join("config.toml");
    write_file(&config, config_text(args))?;

    let mut outcome = Outcome::new("synth", None);
    outcome.artifact(paths.metadata);
    outcome.artifact(paths.images);
    outcome.artifact(paths.shenzhen);
    outcome.artifact(paths.montgomery);
    outcome.artifact(config);
    Ok(outcome)
}
