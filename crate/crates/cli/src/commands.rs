use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use spts_core::ffn::{calibrate as build_proxies, ProxyDims, ProxySet};
use spts_core::kvcache::{full_cache_bytes, measured_bytes, predict_bytes, AccountingHeads, GIB};
use spts_core::metrics::{attention_statistics, fidelity_report, flops_report, timed};
use spts_core::model::{gen_toy_model, load_model, save_model, Model, ModelConfig};
use spts_core::pipeline::{generate, FfnSelector, Generation, SkipSchedule, K};
use spts_core::tokens::{check_vocab, format_token_file, load_token_file, synthetic_sequences};

use crate::args::{
    BenchArgs, CalibrateArgs, DiagArgs, GenModelArgs, GenTokensArgs, Heads, Preset, RunArgs, ScheduleArgs,
    SeedArg, Shape,
};
use crate::output::{FlopSummary, LayerSummary, PromptSummary, RunManifest, RunSummary};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn seed(arg: &SeedArg) -> Result<u64> {
    match std::env::var("SPTS_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("SPTS_SEED=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(arg.seed),
    }
}

fn schedule(args: &ScheduleArgs, default: Preset) -> Result<(SkipSchedule, String)> {
    if let Some(path) = &args.schedule {
        return Ok((SkipSchedule::load(path)?, path.display().to_string()));
    }
    let preset = args.preset.unwrap_or(default);
    let s = match preset {
        Preset::Disabled => SkipSchedule::disabled(),
        Preset::Llama => SkipSchedule::llama_3_1_8b(),
        Preset::Qwen => SkipSchedule::qwen_2_5_7b(),
        Preset::Pangu => SkipSchedule::openpangu_1b(),
    };
    let name = match preset {
        Preset::Disabled => "disabled",
        Preset::Llama => "llama-3.1-8b",
        Preset::Qwen => "qwen-2.5-7b",
        Preset::Pangu => "openpangu-1b",
    };
    Ok((s, format!("preset:{name}")))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(spts_core::Error::from)?;
    Ok(())
}

pub fn gen_model(a: GenModelArgs) -> Result<()> {
    let seed = seed(&a.seed)?;
    if a.heads == 0 {
        return Err(CliError::Usage("--heads must be at least 1".into()));
    }
    let config = ModelConfig {
        num_layers: a.layers,
        hidden_dim: a.dim,
        num_heads: a.heads,
        num_kv_heads: a.kv_heads.unwrap_or(a.heads),
        head_dim: a.head_dim.unwrap_or(a.dim / a.heads),
        ffn_dim: a.ffn,
        vocab_size: a.vocab,
        rope_theta: a.rope_theta,
        ..ModelConfig::toy()
    };
    let model = gen_toy_model(config.clone(), seed)?;
    save_model(&model, &a.out)?;
    RunManifest::new("gen-model", seed)
        .flag("layers", config.num_layers)
        .flag("dim", config.hidden_dim)
        .flag("heads", config.num_heads)
        .flag("kv_heads", config.num_kv_heads)
        .flag("head_dim", config.head_dim)
        .flag("ffn", config.ffn_dim)
        .flag("vocab", config.vocab_size)
        .flag("rope_theta", config.rope_theta)
        .output(&a.out)
        .write_beside(&a.out)?;
    println!("wrote {} (seed {seed})", a.out.display());
    Ok(())
}

pub fn gen_tokens(a: GenTokensArgs) -> Result<()> {
    let seed = seed(&a.seed)?;
    let seqs = synthetic_sequences(a.count, a.len, a.vocab, seed)?;
    write_file(&a.out, format_token_file(&seqs).as_bytes())?;
    RunManifest::new("gen-tokens", seed)
        .flag("count", a.count)
        .flag("len", a.len)
        .flag("vocab", a.vocab)
        .output(&a.out)
        .write_beside(&a.out)?;
    println!("wrote {} (seed {seed})", a.out.display());
    Ok(())
}

fn load_prompts(path: &Path, model: &Model) -> Result<Vec<Vec<u32>>> {
    let seqs = load_token_file(path)?;
    check_vocab(&seqs, model.config.vocab_size)?;
    Ok(seqs)
}

fn skip_layers(s: &SkipSchedule, config: &ModelConfig) -> Result<Vec<usize>> {
    Ok(s.expand(config.num_layers, 1)?
        .iter()
        .filter(|p| p.skip)
        .map(|p| p.layer - 1)
        .collect())
}

pub fn calibrate(a: CalibrateArgs) -> Result<()> {
    let seed = seed(&a.seed)?;
    let model = load_model(&a.model)?;
    let cfg = &model.config;
    let seqs = load_prompts(&a.tokens, &model)?;
    let layers: Vec<usize> = if !a.layers.is_empty() {
        if let Some(&l) = a.layers.iter().find(|&&l| l == 0 || l > cfg.num_layers) {
            return Err(CliError::Usage(format!(
                "layer {l} outside 1..={}",
                cfg.num_layers
            )));
        }
        let mut l: Vec<usize> = a.layers.iter().map(|l| l - 1).collect();
        l.sort_unstable();
        l.dedup();
        l
    } else if a.schedule.schedule.is_some() || a.schedule.preset.is_some() {
        skip_layers(&schedule(&a.schedule, Preset::Disabled)?.0, cfg)?
    } else {
        (0..cfg.num_layers).collect()
    };
    if layers.is_empty() {
        return Err(CliError::Usage("the schedule has no skipping layers to calibrate".into()));
    }
    let dims = ProxyDims {
        d_low: a.dlow,
        rank: a.rank,
    };
    let (proxies, summary) = build_proxies(&model, &seqs, &layers, dims, a.rho)?;
    proxies.save(&a.out)?;
    for s in &summary {
        println!(
            "layer {}: channels {}/{} rank {} samples {} rel_error {:.6}",
            s.layer + 1,
            s.d_low,
            cfg.ffn_dim,
            s.rank,
            s.samples,
            s.relative_error
        );
    }
    RunManifest::new("calibrate", seed)
        .input("model", &a.model)
        .input("tokens", &a.tokens)
        .flag("dlow", a.dlow)
        .flag("rank", a.rank)
        .flag("rho", a.rho)
        .flag(
            "layers",
            layers.iter().map(|l| (l + 1).to_string()).collect::<Vec<_>>().join(","),
        )
        .output(&a.out)
        .write_beside(&a.out)?;
    Ok(())
}

fn selector<'a>(
    proxy: Option<&'a ProxySet>,
    s: &SkipSchedule,
    cfg: &ModelConfig,
) -> (FfnSelector<'a>, &'static str) {
    match proxy {
        Some(p) => (FfnSelector::Proxy(p), "proxy"),
        None => {
            if s.is_enabled(cfg.num_layers) {
                eprintln!("note: no --proxy given; feed-forward tokens are chosen by attention score");
            }
            (FfnSelector::AttentionOnly, "attention")
        }
    }
}

fn summarise(g: &Generation, s: &SkipSchedule, cfg: &ModelConfig, n: usize) -> Result<PromptSummary> {
    let plans = s.expand(cfg.num_layers, n)?;
    let pre = &g.prefill;
    let mut stage_candidates = vec![n];
    let mut layers = Vec::with_capacity(pre.layers.len());
    for (t, p) in pre.layers.iter().zip(&plans) {
        let after = t.pruned_to.as_ref().map_or(t.candidates.len(), Vec::len);
        if p.prune_to.is_some() {
            stage_candidates.push(after);
        }
        layers.push(LayerSummary {
            layer: t.layer,
            skipped: t.skipped,
            candidates: t.candidates.len(),
            mha_active: t.mha_active.len(),
            ffn_active: t.ffn_active.len(),
            cached: pre.cache.layer(t.layer - 1).len(),
            pruned_to: t.pruned_to.as_ref().map(Vec::len),
        });
    }
    Ok(PromptSummary {
        prompt_len: n,
        generated: g.tokens.clone(),
        prefill_flops: FlopSummary {
            block: pre.flops.block,
            attention_probe: pre.flops.attention_probe,
            proxy_probe: pre.flops.proxy_probe,
            total: pre.flops.total(),
        },
        kv_bytes: measured_bytes(&pre.cache, cfg, AccountingHeads::Query),
        full_kv_bytes: full_cache_bytes(cfg, n, AccountingHeads::Query),
        stage_candidates,
        layers,
    })
}

pub fn run(a: RunArgs) -> Result<()> {
    let seed = seed(&a.seed)?;
    let model = load_model(&a.model)?;
    let cfg = &model.config;
    let prompts = load_prompts(&a.prompt_ids, &model)?;
    let (s, label) = if a.baseline {
        (SkipSchedule::disabled(), "preset:disabled".to_string())
    } else {
        schedule(&a.schedule, Preset::Disabled)?
    };
    s.validate(cfg.num_layers)?;
    let proxies = match (&a.proxy, a.baseline) {
        (Some(p), false) => Some(ProxySet::load(p)?),
        _ => None,
    };
    let (sel, sel_name) = selector(proxies.as_ref(), &s, cfg);

    let mut out = Vec::with_capacity(prompts.len());
    for prompt in &prompts {
        let (g, elapsed) = timed(|| generate(&model, &s, prompt, a.gen, sel));
        let g = g?;
        eprintln!(
            "prompt of {} tokens: {:.3} s for {} generated",
            prompt.len(),
            elapsed.as_secs_f64(),
            a.gen
        );
        let ids: Vec<String> = g.tokens.iter().map(u32::to_string).collect();
        println!("{}", ids.join(" "));
        out.push(summarise(&g, &s, cfg, prompt.len())?);
    }
    let summary = RunSummary {
        seed,
        model: a.model.display().to_string(),
        mode: if a.baseline { "baseline" } else { "spts" },
        ffn_selector: sel_name,
        schedule: label,
        gen: a.gen,
        prompts: out,
    };
    match &a.summary {
        Some(path) => crate::output::write_json(path, &summary)?,
        None => println!("{}", serde_json::to_string_pretty(&summary)?),
    }
    Ok(())
}

fn parse_length(v: &str) -> Result<usize> {
    let t = v.trim();
    let (digits, mult) = match t.strip_suffix(['K', 'k']) {
        Some(d) => (d, K),
        None => (t, 1),
    };
    digits
        .parse::<usize>()
        .ok()
        .and_then(|n| n.checked_mul(mult))
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("`{v}` is not a prompt length")))
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let seed = seed(&a.seed)?;
    let cfg = match &a.model {
        Some(p) => load_model(p)?.config,
        None => match a.shape {
            Shape::Toy => ModelConfig::toy(),
            Shape::Llama => ModelConfig::llama_3_1_8b(),
        },
    };
    let (s, label) = schedule(&a.schedule, Preset::Llama)?;
    s.validate(cfg.num_layers)?;
    let lengths = a.lengths.iter().map(|v| parse_length(v)).collect::<Result<Vec<_>>>()?;
    let heads = match a.heads {
        Heads::Query => AccountingHeads::Query,
        Heads::Kv => AccountingHeads::KeyValue,
    };
    let dims = match (a.dlow, a.rank) {
        (Some(d_low), Some(rank)) => {
            let d = ProxyDims { d_low, rank };
            d.validate(cfg.hidden_dim, cfg.ffn_dim)?;
            Some(d)
        }
        _ => None,
    };

    let mut csv = String::new();
    if a.memory {
        csv.push_str("N,full_bytes,spts_bytes,saving_pct,full_gib,spts_gib\n");
        for &n in &lengths {
            let full = full_cache_bytes(&cfg, n, heads);
            let ours = predict_bytes(&s, &cfg, n, heads)?;
            let saving = 100.0 * (1.0 - ours as f64 / full as f64);
            writeln!(
                csv,
                "{n},{full},{ours},{saving:.2},{:.2},{:.2}",
                full as f64 / GIB,
                ours as f64 / GIB
            )
            .unwrap();
        }
    } else {
        csv.push_str("N,phase,baseline_flops,spts_flops,block_flops,pap_flops,ltp_flops,reduction_ratio\n");
        for &n in &lengths {
            let r = flops_report(&s, &cfg, dims, n, a.gen)?;
            for (phase, p) in [("prefill", r.prefill), ("decode", r.decode)] {
                writeln!(
                    csv,
                    "{n},{phase},{},{},{},{},{},{:.4}",
                    p.baseline,
                    p.spts(),
                    p.block,
                    p.pap,
                    p.ltp,
                    p.reduction_ratio()
                )
                .unwrap();
            }
        }
    }
    match &a.out {
        Some(path) => {
            write_file(path, csv.as_bytes())?;
            let mut m = RunManifest::new("bench", seed)
                .flag("table", if a.memory { "memory" } else { "flops" })
                .flag("schedule", &label)
                .flag("lengths", a.lengths.join(","))
                .flag("heads", format!("{:?}", a.heads).to_lowercase())
                .flag("gen", a.gen);
            m = match &a.model {
                Some(p) => m.input("model", p),
                None => m.flag("shape", format!("{:?}", a.shape).to_lowercase()),
            };
            if let Some(d) = dims {
                m = m.flag("dlow", d.d_low).flag("rank", d.rank);
            }
            m.output(path).write_beside(path)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn diag(a: DiagArgs) -> Result<()> {
    let seed = seed(&a.seed)?;
    let model = load_model(&a.model)?;
    let cfg = &model.config;
    let prompts = load_prompts(&a.prompt_ids, &model)?;
    let (s, label) = schedule(&a.schedule, Preset::Disabled)?;
    s.validate(cfg.num_layers)?;
    let proxies = a.proxy.as_ref().map(ProxySet::load).transpose()?;
    let (sel, sel_name) = selector(proxies.as_ref(), &s, cfg);
    fs::create_dir_all(&a.out_dir).map_err(spts_core::Error::from)?;
    let mut manifest = RunManifest::new("diag", seed)
        .input("model", &a.model)
        .input("prompt_ids", &a.prompt_ids)
        .flag("schedule", &label)
        .flag("ffn_selector", sel_name);
    if let Some(p) = &a.proxy {
        manifest = manifest.input("proxy", p);
    }

    if a.fidelity {
        let mut csv = String::from(
            "prompt,layer,candidates,spts_cos,mha_io_cos,ffn_io_cos,block_io_cos,logit_max_abs\n",
        );
        for (i, prompt) in prompts.iter().enumerate() {
            let r = fidelity_report(&model, &s, prompt, sel)?;
            for l in &r.layers {
                writeln!(
                    csv,
                    "{i},{},{},{:.6},{:.6},{:.6},{:.6},{:.6e}",
                    l.layer, l.candidates, l.spts_vs_baseline, l.mha_cos, l.ffn_cos, l.block_cos, r.logit_max_abs
                )
                .unwrap();
            }
        }
        let path = a.out_dir.join("fidelity.csv");
        write_file(&path, csv.as_bytes())?;
        manifest = manifest.output(&path);
    }
    if a.attention {
        if let Some(&p) = a.coverage.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(CliError::Usage(format!("coverage fraction {p} outside (0, 1)")));
        }
        let mut csv = String::from("prompt,layer");
        for p in &a.coverage {
            write!(csv, ",cov_{p}").unwrap();
        }
        csv.push_str(",jaccard_prev\n");
        for (i, prompt) in prompts.iter().enumerate() {
            for st in attention_statistics(&model, prompt, &a.coverage, a.top)? {
                write!(csv, "{i},{}", st.layer).unwrap();
                for c in &st.coverage {
                    write!(csv, ",{c}").unwrap();
                }
                match st.jaccard_prev {
                    Some(j) => writeln!(csv, ",{j:.6}").unwrap(),
                    None => csv.push_str(",\n"),
                }
            }
        }
        let path = a.out_dir.join("attention.csv");
        write_file(&path, csv.as_bytes())?;
        manifest = manifest
            .flag("coverage", a.coverage.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
            .flag("top", a.top)
            .output(&path);
    }
    crate::output::write_json(&a.out_dir.join("manifest.json"), &manifest)?;
    Ok(())
}
