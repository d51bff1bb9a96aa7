mod common;

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use common::{batch, max_abs_diff, small_config, to_vec};
use h2r_model::flow::flow_matching_loss;
use h2r_model::{Conditioning, ForwardOptions, Generator, ModelConfig, ParamRole, Precision, TrainMode};

fn velocity(gen: &Generator, b: &common::Batch, opts: ForwardOptions) -> Tensor {
    let zt = h2r_model::interpolate(&b.z0, &b.z1, &b.t).unwrap();
    gen.forward(&zt, &b.t, &b.cond, opts).unwrap()
}

fn set_all(gen: &Generator, role: ParamRole, seed: u64) {
    for (i, name) in gen.params.names(role).iter().enumerate() {
        let p = gen.params.get(name).unwrap();
        let noise = h2r_model::flow::noise(p.var.dims(), seed + i as u64, gen.device(), gen.dtype()).unwrap();
        p.var.set(&(noise * 0.1).unwrap()).unwrap();
    }
}

#[test]
fn sequence_length_is_two_grids_plus_text() {
    let cfg = ModelConfig::default();
    let grid = cfg.tokenizer.grid(49, 64, 64).unwrap();
    assert_eq!(grid.len(), 13 * 8 * 8);
    assert_eq!(cfg.sequence_len(&grid), 2 * 832 + 1);
}

#[test]
fn fresh_lora_is_an_exact_identity() {
    for precision in [Precision::F32, Precision::F64] {
        let gen = Generator::new(small_config(precision), 4).unwrap();
        let b = batch(&gen, 1, 2, 5);
        let with = velocity(&gen, &b, ForwardOptions { grad: None, lora: true });
        let without = velocity(&gen, &b, ForwardOptions { grad: None, lora: false });
        assert_eq!(to_vec(&with), to_vec(&without));
        set_all(&gen, ParamRole::Lora, 9);
        let moved = velocity(&gen, &b, ForwardOptions { grad: None, lora: true });
        assert!(max_abs_diff(&moved, &without) > 1e-6);
    }
}

#[test]
fn lora_only_gradients_skip_the_base() {
    let gen = Generator::new(small_config(Precision::F64), 5).unwrap();
    set_all(&gen, ParamRole::Lora, 30);
    let b = batch(&gen, 2, 2, 5);
    let loss = flow_matching_loss(&gen.field(ForwardOptions::train(TrainMode::LoraOnly)), &b.z0, &b.z1, &b.t, &b.cond).unwrap();
    let grads = loss.backward().unwrap();
    for (name, p) in gen.params.iter() {
        let g = grads.get(p.var.as_tensor());
        match p.role {
            ParamRole::Base => assert!(g.is_none(), "{name} received a gradient"),
            _ => {
                let g = g.unwrap_or_else(|| panic!("{name} has no gradient"));
                assert!(to_vec(g).iter().any(|v| *v != 0.0), "{name} gradient is zero");
            }
        }
    }
    let full = flow_matching_loss(&gen.field(ForwardOptions::train(TrainMode::Full)), &b.z0, &b.z1, &b.t, &b.cond).unwrap();
    let grads = full.backward().unwrap();
    assert!(gen.params.iter().all(|(_, p)| grads.get(p.var.as_tensor()).is_some()));
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let gen = Generator::new(small_config(Precision::F64), 6).unwrap();
    set_all(&gen, ParamRole::Lora, 50);
    let b = batch(&gen, 3, 2, 5);
    let field = gen.field(ForwardOptions::train(TrainMode::Full));
    let loss_of = || flow_matching_loss(&field, &b.z0, &b.z1, &b.t, &b.cond).unwrap().to_scalar::<f64>().unwrap();
    let grads = flow_matching_loss(&field, &b.z0, &b.z1, &b.t, &b.cond).unwrap().backward().unwrap();
    let probes = [
        ("base.in_proj.w", 37),
        ("base.role", 20),
        ("base.time.w1", 5),
        ("base.blocks.0.attn.q.w", 17),
        ("base.blocks.1.attn.k.w", 3),
        ("base.blocks.1.attn.v.b", 2),
        ("base.blocks.0.ln1.g", 4),
        ("base.blocks.1.mlp.w1", 40),
        ("base.ln_f.b", 7),
        ("base.head.w", 100),
        ("lora.blocks.0.q.a", 9),
        ("lora.blocks.1.v.b", 6),
        ("prompt.table", 11),
    ];
    let h = 1e-3;
    for (name, idx) in probes {
        let p = gen.params.get(name).unwrap();
        let orig = p.var.as_tensor().copy().unwrap();
        let base = to_vec(&orig);
        let at = |delta: f64| {
            let mut v = base.clone();
            v[idx] += delta;
            p.var.set(&Tensor::from_vec(v, orig.dims(), gen.device()).unwrap()).unwrap();
            loss_of()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        p.var.set(&orig).unwrap();
        let an = to_vec(grads.get(p.var.as_tensor()).unwrap())[idx];
        let scale = fd.abs().max(an.abs()).max(1e-2);
        assert!((fd - an).abs() <= 1e-4 * scale, "{name}[{idx}]: analytic {an}, numeric {fd}");
    }
}

#[test]
fn permuting_condition_tokens_with_their_positions_changes_nothing() {
    let gen = Generator::new(small_config(Precision::F64), 7).unwrap();
    set_all(&gen, ParamRole::Lora, 70);
    let b = batch(&gen, 4, 2, 9);
    let n = b.cond.grid.len();
    let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
    assert_eq!(n % 5, 2, "permutation must be a bijection");
    let idx = Tensor::from_vec(perm.iter().map(|&i| i as u32).collect::<Vec<_>>(), n, gen.device()).unwrap();
    let shuffled = Conditioning {
        tokens: b.cond.tokens.index_select(&idx, 1).unwrap(),
        positions: perm.clone(),
        grid: b.cond.grid,
        prompt_ids: b.cond.prompt_ids.clone(),
    };
    let zt = h2r_model::interpolate(&b.z0, &b.z1, &b.t).unwrap();
    let a = gen.forward(&zt, &b.t, &b.cond, ForwardOptions::INFERENCE).unwrap();
    let c = gen.forward(&zt, &b.t, &shuffled, ForwardOptions::INFERENCE).unwrap();
    assert!(max_abs_diff(&a, &c) < 1e-6);
}

#[test]
fn text_token_reaches_the_output() {
    let mut cfg = small_config(Precision::F64);
    cfg.prompts.push("A human hand is interacting with objects.".into());
    let gen = Generator::new(cfg, 8).unwrap();
    let mut b = batch(&gen, 5, 1, 5);
    let zt = h2r_model::interpolate(&b.z0, &b.z1, &b.t).unwrap();
    let a = gen.forward(&zt, &b.t, &b.cond, ForwardOptions::INFERENCE).unwrap();
    b.cond.prompt_ids = vec![1];
    let c = gen.forward(&zt, &b.t, &b.cond, ForwardOptions::INFERENCE).unwrap();
    assert!(max_abs_diff(&a, &c) > 1e-8);
    b.cond.prompt_ids = vec![2];
    assert!(gen.forward(&zt, &b.t, &b.cond, ForwardOptions::INFERENCE).is_err());
}

#[test]
fn mismatched_inputs_are_rejected() {
    let gen = Generator::new(small_config(Precision::F64), 9).unwrap();
    let b = batch(&gen, 6, 2, 5);
    let short_t = Tensor::from_vec(vec![0.5f64], 1, gen.device()).unwrap();
    assert!(gen.forward(&b.z0, &short_t, &b.cond, ForwardOptions::INFERENCE).is_err());
    let wrong = b.z0.narrow(1, 0, 3).unwrap();
    assert!(gen.forward(&wrong, &b.t, &b.cond, ForwardOptions::INFERENCE).is_err());
}

#[test]
fn same_seed_same_parameters() {
    let cfg = small_config(Precision::F32);
    let a = Generator::new(cfg.clone(), 11).unwrap();
    let b = Generator::new(cfg.clone(), 11).unwrap();
    let c = Generator::new(cfg, 12).unwrap();
    for role in [ParamRole::Base, ParamRole::Lora, ParamRole::Prompt] {
        assert_eq!(a.params.checksum(role).unwrap(), b.params.checksum(role).unwrap());
    }
    assert_ne!(a.params.checksum(ParamRole::Base).unwrap(), c.params.checksum(ParamRole::Base).unwrap());
    let lora_b: BTreeMap<_, _> = a
        .params
        .names(ParamRole::Lora)
        .into_iter()
        .filter(|n| n.ends_with(".b"))
        .map(|n| (n.clone(), to_vec(a.params.get(&n).unwrap().var.as_tensor())))
        .collect();
    assert_eq!(lora_b.len(), 6);
    assert!(lora_b.values().all(|v| v.iter().all(|x| *x == 0.0)));
    assert_eq!(a.params.get("base.in_proj.w").unwrap().var.dtype(), DType::F32);
}

#[test]
fn cloned_generator_does_not_alias() {
    let a = Generator::new(small_config(Precision::F64), 13).unwrap();
    let b = a.clone();
    set_all(&a, ParamRole::Base, 1);
    assert_ne!(a.params.checksum(ParamRole::Base).unwrap(), b.params.checksum(ParamRole::Base).unwrap());
}
