//! Unit tests for `io`.

use sindy_core::dynsys::{add_noise, simulate, system, NoiseSpec};
use sindy_core::io::*;

#[test]
fn roundtrip_is_exact() {
    let s = system("lorenz").unwrap();
    let clean = simulate(&s, &[-8.0, 8.0, 27.0], 0.2, 0.002).unwrap();
    let noisy = add_noise(&clean, &NoiseSpec::new(50.0, 1)).unwrap();
    let mut buf = Vec::new();
    write_trajectory(&mut buf, &noisy, true).unwrap();
    let back = read_trajectory(buf.as_slice()).unwrap();
    assert_eq!(back.values, noisy.values);
    assert_eq!(back.clean_ref, noisy.clean_ref);
    assert!((back.dt - 0.002).abs() < 1e-15);

    let mut buf = Vec::new();
    write_trajectory(&mut buf, &noisy, false).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("t,x1,x2,x3\n"));
    assert!(read_trajectory(buf.as_slice()).unwrap().clean_ref.is_none());
}

#[test]
fn rejects_malformed() {
    assert!(read_trajectory("a,b\n1,2\n".as_bytes()).is_err());
    assert!(read_trajectory("t,x1\n0,1\n0.1,oops\n".as_bytes()).is_err());
    assert!(read_trajectory("t,x1\n0,1\n0.1,2\n0.2,3\n0.3,4\n0.9,5\n".as_bytes()).is_err());
}
