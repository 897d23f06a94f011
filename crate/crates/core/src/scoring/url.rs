//! Canonical form for URL cells.

fn is_unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~')
}

fn decode_unreserved(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%'
            && i + 2 < bytes.len()
            && bytes[i + 1].is_ascii_hexdigit()
            && bytes[i + 2].is_ascii_hexdigit()
        {
            let v = u8::from_str_radix(&s[i + 1..i + 3], 16).unwrap_or(0);
            if is_unreserved(v) {
                out.push(v as char);
                i += 3;
                continue;
            }
        }
        let ch = s[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

fn split_port(hostport: &str) -> (&str, Option<&str>) {
    let host_end = if hostport.starts_with('[') {
        hostport.find(']').map_or(hostport.len(), |i| i + 1)
    } else {
        hostport.rfind(':').unwrap_or(hostport.len())
    };
    let (host, rest) = hostport.split_at(host_end);
    match rest.strip_prefix(':') {
        Some(p) if p.chars().all(|c| c.is_ascii_digit()) => (host, Some(p)),
        _ => (hostport, None),
    }
}

/// Lowercases scheme and host, drops default ports and fragments, trims one
/// trailing slash from non-root paths and decodes percent-escaped unreserved
/// characters. The query string is kept verbatim. Non-URLs are only trimmed.
pub fn normalize_url(raw: &str) -> String {
    let s = raw.trim();
    let Some((scheme, rest)) = s.split_once("://") else {
        return s.to_string();
    };
    if scheme.is_empty() || !scheme.chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c)) {
        return s.to_string();
    }
    let scheme = scheme.to_ascii_lowercase();
    let rest = rest.split_once('#').map_or(rest, |(r, _)| r);
    let auth_end = rest.find(['/', '?']).unwrap_or(rest.len());
    let (authority, tail) = rest.split_at(auth_end);
    let (path, query) = match tail.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (tail, None),
    };

    let (userinfo, hostport) = match authority.rsplit_once('@') {
        Some((u, h)) => (Some(u), h),
        None => (None, authority),
    };
    let (host, port) = split_port(hostport);
    let port = port.filter(|p| !matches!((scheme.as_str(), *p), ("http", "80") | ("https", "443")));

    let mut path = decode_unreserved(path);
    if path.is_empty() {
        path.push('/');
    } else if path.len() > 1 && path.ends_with('/') {
        path.pop();
    }

    let mut out = format!("{scheme}://");
    if let Some(u) = userinfo {
        out.push_str(u);
        out.push('@');
    }
    out.push_str(&host.to_lowercase());
    if let Some(p) = port {
        out.push(':');
        out.push_str(p);
    }
    out.push_str(&path);
    if let Some(q) = query {
        out.push('?');
        out.push_str(q);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules() {
        assert_eq!(normalize_url("HTTP://X.com:80/p/"), "http://x.com/p");
        assert_eq!(normalize_url("https://x.com/%7Euser"), "https://x.com/~user");
        assert_eq!(normalize_url("https://x.com/?b=2&a=1"), "https://x.com/?b=2&a=1");
        assert_eq!(normalize_url("https://Example.com:443/a/"), "https://example.com/a");
        assert_eq!(normalize_url("https://example.com/a"), "https://example.com/a");
    }

    #[test]
    fn keeps_meaningful_parts() {
        assert_eq!(normalize_url("http://x.com:8080/a#frag"), "http://x.com:8080/a");
        assert_eq!(normalize_url("https://x.com:80/"), "https://x.com:80/");
        assert_eq!(normalize_url("https://x.com/a%2Fb"), "https://x.com/a%2Fb");
        assert_eq!(normalize_url("https://x.com"), "https://x.com/");
        assert_eq!(normalize_url("  not a url "), "not a url");
    }
}
