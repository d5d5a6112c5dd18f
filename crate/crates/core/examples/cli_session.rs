//! Drives the command-line front end end to end in a scratch directory.

mod common;

use idsnet::cli::main_with_args;

fn idsnet(args: &[&str]) -> i32 {
    let code = main_with_args(std::iter::once("idsnet").chain(args.iter().copied()));
    println!("$ idsnet {}  -> exit {code}", args.join(" "));
    code
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().display().to_string();
    let cfg = format!("{root}/run.toml");
    let mut config = common::small_config();
    config.train.max_epoch = 2;
    std::fs::write(&cfg, config.to_toml())?;

    let data = format!("{root}/data");
    let plants = [("clear_site", "0.3", "10"), ("cloudy_site", "0.9", "14")];
    for (name, cloud, night) in plants {
        idsnet(&[
            "--out",
            &data,
            "synth",
            "--days",
            "30",
            "--station",
            name,
            "--cloud",
            cloud,
            "--night-hours",
            night,
        ]);
    }
    let target = format!("{root}/target");
    idsnet(&[
        "--out",
        &target,
        "--seed",
        "9",
        "synth",
        "--days",
        "4",
        "--station",
        "new_plant",
    ]);
    let target = format!("{target}/new_plant.csv");

    let sel = format!("{root}/select");
    let clear = format!("{data}/clear_site.csv");
    let cloudy = format!("{data}/cloudy_site.csv");
    idsnet(&[
        "--config",
        &cfg,
        "--out",
        &sel,
        "select-source",
        "--source",
        &clear,
        "--source",
        &cloudy,
        "--target",
        &target,
    ]);
    print!("{}", std::fs::read_to_string(format!("{sel}/mmd.csv"))?);

    let pre = format!("{root}/pretrain");
    idsnet(&[
        "--config",
        &cfg,
        "--out",
        &pre,
        "pretrain",
        "--station",
        &clear,
    ]);
    let ckpt = format!("{pre}/model.ckpt");
    idsnet(&[
        "--out",
        &format!("{root}/eval"),
        "evaluate",
        "--checkpoint",
        &ckpt,
        "--station",
        &clear,
    ]);
    println!(
        "{}",
        std::fs::read_to_string(format!("{pre}/manifest.json"))?
    );

    // A CSV is not a checkpoint: data error.
    idsnet(&[
        "--out",
        &format!("{root}/bad"),
        "explain",
        "--checkpoint",
        &target,
    ]);
    Ok(())
}
