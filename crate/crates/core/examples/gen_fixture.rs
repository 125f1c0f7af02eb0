// One-off generator for the synthetic CI fixture; its committed output lives
// at tests/fixtures/meps_synthetic.csv.
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn normal(rng: &mut ChaCha12Rng) -> f64 {
    genheck::numerics::norm_quantile(((rng.random::<u64>() >> 11) as f64 + 0.5) / 9007199254740992.0)
}

fn uniform(rng: &mut ChaCha12Rng) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) / 9007199254740992.0
}

fn main() {
    let mut rng = ChaCha12Rng::seed_from_u64(0x4669_7874);
    println!("educ,age,income,female,totchr,ins,blhisp,dambexp,lnambx");
    for _ in 0..200 {
        let educ = (12.8 + 2.5 * normal(&mut rng)).round().clamp(0.0, 17.0);
        let age = ((2.1 + 4.3 * uniform(&mut rng)) * 100.0).round() / 100.0;
        let income = ((28.0 * (0.6 * normal(&mut rng)).exp()) * 1000.0).round() / 1000.0;
        let female = f64::from(uniform(&mut rng) < 0.52);
        let totchr = {
            let u = uniform(&mut rng);
            if u < 0.55 { 0.0 } else if u < 0.82 { 1.0 } else if u < 0.95 { 2.0 } else { 3.0 }
        };
        let ins = f64::from(uniform(&mut rng) < 0.5);
        let blhisp = f64::from(uniform(&mut rng) < 0.3);

        let mu1 = 5.704 + 0.184 * age + 0.250 * female + 0.001 * educ - 0.128 * blhisp
            + 0.431 * totchr - 0.103 * ins;
        let mu2 = -0.590 + 0.086 * age + 0.630 * female + 0.057 * educ - 0.337 * blhisp
            + 0.758 * totchr + 0.173 * ins + 0.002 * income;
        let sigma = (0.508 - 0.025 * age - 0.105 * totchr - 0.107 * ins).exp();
        let t: f64 = -0.648 - 0.403 * female - 0.438 * totchr;
        let rho = t.tanh();
        let sq = 1.0 / t.cosh();

        let eta = normal(&mut rng);
        let eps2 = normal(&mut rng);
        let eps1 = sigma * (rho * eps2 + sq * eta);
        let selected = mu2 + eps2 > 0.0;
        let lnambx = if selected { format!("{:.4}", mu1 + eps1) } else { String::new() };
        println!(
            "{educ},{age},{income},{female},{totchr},{ins},{blhisp},{},{lnambx}",
            u8::from(selected)
        );
    }
}
