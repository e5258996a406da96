use prefalign::dpo::load_checkpoint;
use prefalign::evalsuite::{drift_paired, CheckpointSource};
use prefalign::generate::SampleSpec;
use prefalign::prefdata::load_tasks;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // usage: proto <tasks.pft> <m> <seed> <base.pfc> <policy.pfc>...
    let (tasks, k) = load_tasks(args[1].as_ref()).unwrap();
    let m: usize = args[2].parse().unwrap();
    let seed: u64 = args[3].parse().unwrap();
    let base = load_checkpoint(args[4].as_ref()).unwrap();
    let spec = SampleSpec::default_for(base.generator_tag);
    let bsrc = CheckpointSource { ckpt: &base, spec: &spec, k };
    for p in &args[5..] {
        let pol = load_checkpoint(p.as_ref()).unwrap();
        let psrc = CheckpointSource { ckpt: &pol, spec: &spec, k };
        let diffs = drift_paired(&bsrc, &psrc, &tasks, m, seed).unwrap();
        print!("{p}:");
        for s in &diffs {
            print!(" {}={:+.5}(se {:.5}, t {:+.1})", s.name, s.drift, s.se,
                   if s.se > 0.0 { s.drift / s.se } else { f64::NAN });
        }
        println!();
    }
}
