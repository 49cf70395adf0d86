//! Breaks recall test accuracy down by the bin holding the matched pair.
use focus_core::checkpoint::load_checkpoint;
use focus_core::data::{gen_recall, split_recall};
use focus_core::metrics;
use focus_core::model::{bind_model, model_forward};
use focus_core::tensor::Tape;

fn main() {
    let path = std::env::args().nth(1).expect("checkpoint path");
    let ck = load_checkpoint(&path).expect("load");
    let cfg = ck.cfg;
    let samples = gen_recall(cfg.vocab, cfg.l, 2000, 0).expect("gen");
    let (_, test) = split_recall(samples, 0.1).expect("split");
    let nbins = cfg.nbins();
    let mut hit = vec![0usize; nbins];
    let mut tot = vec![0usize; nbins];
    for s in &test {
        let tape = Tape::new();
        let mp = bind_model(&ck.store, &tape, &cfg).unwrap();
        let logits = model_forward(&s.tokens, &mp, &cfg).unwrap();
        let pred = metrics::final_argmax(&logits).unwrap();
        let b = s.query_pos / cfg.nfft;
        tot[b] += 1;
        hit[b] += (pred == s.target) as usize;
    }
    for b in 0..nbins {
        println!(
            "bin {b}: {}/{} = {:.3}",
            hit[b],
            tot[b],
            hit[b] as f64 / tot[b].max(1) as f64
        );
    }
}
