#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lumidec::image_io::save_png;
use lumidec_core::augment::ImagePair;
use lumidec_core::checkpoint::Meta;
use lumidec_core::net1::Net1Config;
use lumidec_core::net2::Net2Config;
use lumidec_core::pipeline::{Net1Model, Net2Model};
use lumidec_core::synthetic::six_pairs;
use lumidec_core::tensor::Tensor;

/// Writes `pairs` as `root/low/<name>.png` and `root/high/<name>.png`.
pub fn write_dataset(root: &Path, pairs: &[ImagePair]) {
    for (dir, pick) in [("low", true), ("high", false)] {
        std::fs::create_dir_all(root.join(dir)).unwrap();
        for p in pairs {
            let t = if pick { &p.low } else { &p.high };
            save_png(t, &root.join(dir).join(format!("{}.png", p.name))).unwrap();
        }
    }
}

/// Fifteen seeded pairs of the given extents.
pub fn fifteen_pairs(h: usize, w: usize) -> Vec<ImagePair> {
    let mut out = Vec::new();
    for seed in 0..3 {
        for mut p in six_pairs(h, w, seed).unwrap() {
            p.name = format!("s{seed}_{}", p.name);
            out.push(p);
        }
    }
    out.truncate(15);
    out
}

pub fn small_net1() -> Net1Model {
    Net1Model::init(Net1Config::with_base(4), 1).unwrap()
}

pub fn small_net2(guided: bool) -> Net2Model {
    let c = Net2Config { scales: 2, residual_blocks: 1, use_guidance: guided, ..Net2Config::with_base(4) };
    Net2Model::init(c, 1).unwrap()
}

pub fn save_net1(dir: &Path, m: &Net1Model) -> PathBuf {
    let p = dir.join("net1.ldle");
    lumidec::files::save_checkpoint(&m.to_checkpoint(Meta::new()), &p).unwrap();
    p
}

pub fn save_net2(dir: &Path, m: &Net2Model, name: &str) -> PathBuf {
    let p = dir.join(name);
    lumidec::files::save_checkpoint(&m.to_checkpoint(Meta::new()), &p).unwrap();
    p
}

pub fn gradient_image(h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn([1, 3, h, w], |_, c, y, x| 0.03 + 0.25 * (x as f32 / w as f32) + 0.05 * c as f32 + 0.1 * (y % 3) as f32 / 3.0)
}

pub fn lumidec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lumidec")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
