/// Writes finite floats as JSON numbers and the non-finite ones as the
/// strings `"inf"`, `"-inf"` and `"nan"`, which plain JSON cannot carry.
pub mod float_repr {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}
