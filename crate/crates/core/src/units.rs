//! Unit conversions. Internally every rate is per millisecond: arrivals in
//! requests/ms, processing speeds in cycles/ms, latencies in ms.

/// Requests per second to requests per millisecond.
pub fn per_second_to_per_ms(rate: f64) -> f64 {
    rate / 1_000.0
}

pub fn per_ms_to_per_second(rate: f64) -> f64 {
    rate * 1_000.0
}

/// Arrival rates tabulated in units of 100 requests/s.
pub fn hundreds_per_second_to_per_ms(rate: f64) -> f64 {
    per_second_to_per_ms(rate * 100.0)
}

pub fn per_ms_to_hundreds_per_second(rate: f64) -> f64 {
    per_ms_to_per_second(rate) / 100.0
}

/// Processing speeds tabulated in units of 10^6 cycles/ms.
pub fn mega_cycles_per_ms(speed: f64) -> f64 {
    speed * 1e6
}

pub fn to_mega_cycles_per_ms(speed: f64) -> f64 {
    speed / 1e6
}

/// Task sizes tabulated in units of 10^7 cycles.
pub fn ten_mega_cycles(size: f64) -> f64 {
    size * 1e7
}

pub fn to_ten_mega_cycles(size: f64) -> f64 {
    size / 1e7
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn same_to_12_digits(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
    }

    #[test]
    fn table_values() {
        assert!(same_to_12_digits(hundreds_per_second_to_per_ms(4.0), 0.4));
        assert!(same_to_12_digits(mega_cycles_per_ms(5.4), 5.4e6));
        assert!(same_to_12_digits(ten_mega_cycles(4.1), 4.1e7));
    }

    proptest! {
        #[test]
        fn conversions_round_trip(x in 1e-6f64..1e9) {
            prop_assert!(same_to_12_digits(per_ms_to_hundreds_per_second(hundreds_per_second_to_per_ms(x)), x));
            prop_assert!(same_to_12_digits(per_ms_to_per_second(per_second_to_per_ms(x)), x));
            prop_assert!(same_to_12_digits(to_mega_cycles_per_ms(mega_cycles_per_ms(x)), x));
            prop_assert!(same_to_12_digits(to_ten_mega_cycles(ten_mega_cycles(x)), x));
        }
    }
}
