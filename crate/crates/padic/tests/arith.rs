use num_bigint::BigInt;
use num_traits::One;
use padic::arith::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn embed_rational_examples() {
    // -13/3 mod 8: 3·3 = 9 ≡ 1, so r = -13·3 = -39 ≡ 1 mod 8
    let r = embed_rational(&BigInt::from(-13), &BigInt::from(3), 2, 3).unwrap();
    assert_eq!(u64::try_from(r.value()).unwrap(), 1);

    let r = embed_rational(&BigInt::from(5), &BigInt::one(), 2, 3).unwrap();
    assert_eq!(u64::try_from(r.value()).unwrap(), 5);

    let r = embed_rational(&BigInt::from(-1), &BigInt::from(3), 2, 4).unwrap();
    assert_eq!(u64::try_from(r.value()).unwrap(), 5);

    assert!(matches!(
        embed_rational(&BigInt::one(), &BigInt::from(2), 2, 3),
        Err(ArithError::DenominatorNotCoprime(..))
    ));
    assert!(matches!(
        embed_rational(&BigInt::one(), &BigInt::from(10), 6, 2),
        Err(ArithError::DenominatorNotCoprime(..))
    ));
}

#[test]
fn embed_rational_satisfies_congruence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA51C);
    let mut done = 0;
    while done < 1000 {
        let p = *[2u64, 3, 4, 6, 12].iter().nth(rng.gen_range(0..5)).unwrap();
        let a = BigInt::from(rng.gen_range(-1_000_000i64..1_000_000));
        let b = BigInt::from(rng.gen_range(1i64..10_000));
        let k = rng.gen_range(0..12u32);
        match embed_rational(&a, &b, p, k) {
            Ok(r) => {
                let m = BigInt::from(r.modulus());
                let lhs = (&b * BigInt::from(r.value().clone()) - &a) % &m;
                assert!(lhs.eq(&BigInt::from(0)), "b·r ≢ a mod {m}");
                done += 1;
            }
            Err(ArithError::DenominatorNotCoprime(..)) => continue,
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}

#[test]
fn nu_p_examples() {
    assert_eq!(nu_p(&prat(4, 1), 4), Val::Finite(1));
    assert_eq!(nu_p(&prat(0, 1), 3), Val::Infinite);
    assert_eq!(nu_p(&prat(18, 1), 6), Val::Finite(1));
    // ν_4(2) = floor(1/2) = 0
    assert_eq!(nu_p(&prat(2, 1), 4), Val::Finite(0));
    assert_eq!(nu_p(&prat(1, 3), 3), Val::Finite(-1));
    // ν_4(1/2) = floor(-1/2) = -1
    assert_eq!(nu_p(&prat(1, 2), 4), Val::Finite(-1));
}

#[test]
fn nu_q_examples() {
    assert_eq!(nu_q(&prat(2, 1), 4, 2).unwrap(), Val::Finite(1));
    assert_eq!(nu_q(&prat(12, 1), 6, 2).unwrap(), Val::Finite(2));
    assert_eq!(nu_q(&prat(15, 1), 6, 3).unwrap(), Val::Finite(1));
    assert!(matches!(nu_q(&prat(1, 1), 6, 5), Err(ArithError::NotAPrimeFactor(5, 6))));
    assert!(matches!(nu_q(&prat(1, 1), 12, 4), Err(ArithError::NotAPrimeFactor(4, 12))));
}

// independent oracle: largest k in a bounded scan with x/p^k still p-integral
fn nu_p_scan(x: &PRat, p: u64) -> Val {
    use num_traits::Zero;
    if x.is_zero() {
        return Val::Infinite;
    }
    let pr = PRat::from_integer(BigInt::from(p));
    let lo = -24i64;
    let mut scaled = x.clone();
    for _ in lo..0 {
        scaled *= &pr; // start at x/p^lo
    }
    let mut best = None;
    for k in lo..=24 {
        if is_p_integral(&scaled, p) {
            best = Some(k);
        }
        scaled /= &pr;
    }
    Val::Finite(best.expect("scan range too narrow"))
}

#[test]
fn nu_p_matches_scan_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x77AA);
    for _ in 0..1000 {
        let p = *[2u64, 3, 4, 6, 12].iter().nth(rng.gen_range(0..5)).unwrap();
        let num = rng.gen_range(-50_000i64..50_000);
        let den = rng.gen_range(1i64..5_000);
        let x = prat(num, den);
        assert_eq!(nu_p(&x, p), nu_p_scan(&x, p), "x={x} p={p}");
    }
}

#[test]
fn membership_in_pk_zp_matches_per_prime_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x12D);
    for _ in 0..500 {
        let p = *[2u64, 4, 6, 12].iter().nth(rng.gen_range(0..4)).unwrap();
        let x = prat(rng.gen_range(-10_000i64..10_000), rng.gen_range(1i64..500));
        let k = rng.gen_range(0..6u32);
        let by_primes = factorize(p).iter().all(|&(q, e)| match nu_q_rat(&x, q) {
            Val::Finite(v) => v >= e as i64 * k as i64,
            Val::Infinite => true,
        });
        assert_eq!(in_pk_zp(&x, p, k), by_primes);
        // and the pseudo-valuation agrees with membership
        assert_eq!(in_pk_zp(&x, p, k), nu_p(&x, p) >= Val::Finite(k as i64));
    }
}

#[test]
fn crt_split_recombines() {
    let x = Residue::from_u64(6, 3, 15);
    let parts = crt_split(&x);
    assert_eq!(parts.len(), 2);
    assert_eq!(parts[0].base(), 2);
    assert_eq!(parts[0].precision(), 3);
    assert_eq!(u64::try_from(parts[0].value()).unwrap(), 15 % 8);
    assert_eq!(parts[1].base(), 3);
    assert_eq!(u64::try_from(parts[1].value()).unwrap(), 15 % 27);
    assert_eq!(u64::try_from(&crt_combine(&parts)).unwrap(), 15);

    let mut rng = ChaCha8Rng::seed_from_u64(0xC47);
    for _ in 0..300 {
        let p = *[6u64, 12, 30].iter().nth(rng.gen_range(0..3)).unwrap();
        let k = rng.gen_range(1..5u32);
        let v = rng.gen_range(0..1_000_000u64);
        let x = Residue::from_u64(p, k, v);
        let back = crt_combine(&crt_split(&x));
        assert_eq!(&back, x.value());
    }
}

#[test]
fn residue_ops_commute_with_precision_drop() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFEED);
    for _ in 0..500 {
        let p = *[2u64, 3, 6, 10].iter().nth(rng.gen_range(0..4)).unwrap();
        let k = rng.gen_range(1..10u32);
        let k2 = rng.gen_range(0..=k);
        let x = Residue::from_u64(p, k, rng.gen());
        let y = Residue::from_u64(p, k, rng.gen());
        assert_eq!(x.add(&y).reduce(k2), x.reduce(k2).add(&y.reduce(k2)));
        assert_eq!(x.mul(&y).reduce(k2), x.reduce(k2).mul(&y.reduce(k2)));
        assert_eq!(x.sub(&y).reduce(k2), x.reduce(k2).sub(&y.reduce(k2)));
    }
}

#[test]
fn val_ext_reports_all_primes() {
    let v = val_ext(&prat(12, 1), 6);
    assert_eq!(v.per_prime, vec![(2, Val::Finite(2)), (3, Val::Finite(1))]);
    assert_eq!(v.nu_p, Val::Finite(1));
    let z = val_ext(&prat(0, 1), 6);
    assert!(z.per_prime.iter().all(|&(_, v)| v == Val::Infinite));
    assert_eq!(z.nu_p, Val::Infinite);
}
