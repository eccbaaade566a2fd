use percent_encoding::percent_decode_str;

/// Human-readable name for an IRI: the final path segment, percent-decoded,
/// with DBpedia's `_` word separators turned back into spaces.
///
/// `http://dbpedia.org/resource/City_of_Bankstown` becomes `City of Bankstown`.
/// A uri with no `/` or `#` is its own label.
pub fn label_from_uri(uri: &str) -> String {
    let trimmed = uri.trim_end_matches(['/', '#']);
    let segment = match trimmed.rfind(['/', '#']) {
        Some(pos) => &trimmed[pos + 1..],
        None => trimmed,
    };
    let segment = if segment.is_empty() { uri } else { segment };
    percent_decode_str(segment)
        .decode_utf8_lossy()
        .replace('_', " ")
}
