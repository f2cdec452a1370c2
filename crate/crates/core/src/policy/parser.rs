use thiserror::Error;

use super::{AttributeDictionary, PolicyExpr};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown attribute {name:?} at byte {pos}")]
    UnknownAttribute { pos: usize, name: String },
    #[error("negation is not supported (at byte {pos}); policies must be monotone")]
    Negation { pos: usize },
}

impl ParseError {
    fn syntax(pos: usize, message: impl Into<String>) -> Self {
        ParseError::Syntax { pos, message: message.into() }
    }

    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::UnknownAttribute { pos, .. }
            | ParseError::Negation { pos } => *pos,
        }
    }
}

pub(crate) fn is_attr_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')
}

pub(crate) fn is_keyword(word: &str) -> bool {
    ["and", "or", "not"].iter().any(|k| word.eq_ignore_ascii_case(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Open,
    Close,
    And,
    Or,
    Word,
    End,
}

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    kind: Kind,
    text: &'a str,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token<'_>>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '(' || c == ')' {
            chars.next();
            let kind = if c == '(' { Kind::Open } else { Kind::Close };
            tokens.push(Token { kind, text: &text[pos..pos + 1], pos });
        } else if is_attr_char(c) {
            let mut end = pos;
            while let Some(&(i, c)) = chars.peek() {
                if !is_attr_char(c) {
                    break;
                }
                end = i + c.len_utf8();
                chars.next();
            }
            let word = &text[pos..end];
            let kind = if word.eq_ignore_ascii_case("and") {
                Kind::And
            } else if word.eq_ignore_ascii_case("or") {
                Kind::Or
            } else if word.eq_ignore_ascii_case("not") {
                return Err(ParseError::Negation { pos });
            } else {
                Kind::Word
            };
            tokens.push(Token { kind, text: word, pos });
        } else if c == '!' || c == '~' {
            return Err(ParseError::Negation { pos });
        } else {
            return Err(ParseError::syntax(pos, format!("unexpected character {c:?}")));
        }
    }
    tokens.push(Token { kind: Kind::End, text: "", pos: text.len() });
    Ok(tokens)
}

struct Parser<'a, 'd> {
    tokens: Vec<Token<'a>>,
    cursor: usize,
    dict: &'d AttributeDictionary,
}

impl<'a> Parser<'a, '_> {
    fn peek(&self) -> Token<'a> {
        self.tokens[self.cursor]
    }

    fn bump(&mut self) -> Token<'a> {
        let tok = self.tokens[self.cursor];
        if tok.kind != Kind::End {
            self.cursor += 1;
        }
        tok
    }

    fn expr(&mut self) -> Result<PolicyExpr, ParseError> {
        let mut node = self.term()?;
        while self.peek().kind == Kind::Or {
            self.bump();
            node = PolicyExpr::or(node, self.term()?);
        }
        Ok(node)
    }

    fn term(&mut self) -> Result<PolicyExpr, ParseError> {
        let mut node = self.factor()?;
        while self.peek().kind == Kind::And {
            self.bump();
            node = PolicyExpr::and(node, self.factor()?);
        }
        Ok(node)
    }

    fn factor(&mut self) -> Result<PolicyExpr, ParseError> {
        let tok = self.bump();
        match tok.kind {
            Kind::Word => self
                .dict
                .resolve(tok.text)
                .map(PolicyExpr::Leaf)
                .ok_or_else(|| {
                    if tok.text.bytes().all(|b| b.is_ascii_digit()) {
                        ParseError::syntax(tok.pos, "attribute literal does not fit in 64 bits")
                    } else {
                        ParseError::UnknownAttribute { pos: tok.pos, name: tok.text.to_string() }
                    }
                }),
            Kind::Open => {
                let inner = self.expr()?;
                let close = self.bump();
                if close.kind != Kind::Close {
                    return Err(ParseError::syntax(close.pos, "expected `)`"));
                }
                Ok(inner)
            }
            Kind::End => Err(ParseError::syntax(tok.pos, "unexpected end of policy")),
            _ => Err(ParseError::syntax(tok.pos, format!("unexpected {:?}", tok.text))),
        }
    }
}

/// Parses policy text, resolving attribute names through `dict`.
pub fn parse_policy(text: &str, dict: &AttributeDictionary) -> Result<PolicyExpr, ParseError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens, cursor: 0, dict };
    let expr = parser.expr()?;
    let rest = parser.peek();
    if rest.kind != Kind::End {
        return Err(ParseError::syntax(rest.pos, format!("unexpected {:?}", rest.text)));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::AttributeId;
    use proptest::prelude::*;

    fn dict() -> AttributeDictionary {
        AttributeDictionary::new()
            .with("Manufacturer", 11)
            .and_then(|d| d.with("Supplier", 16))
            .and_then(|d| d.with("Electronics", 3))
            .and_then(|d| d.with("A", 101))
            .and_then(|d| d.with("B", 102))
            .and_then(|d| d.with("C", 103))
            .and_then(|d| d.with("D", 104))
            .unwrap()
    }

    fn leaf(v: u64) -> PolicyExpr {
        PolicyExpr::Leaf(AttributeId(v))
    }

    #[test]
    fn running_example_policy() {
        let p = parse_policy("14548487 and (Manufacturer or Supplier)", &dict()).unwrap();
        assert_eq!(p, PolicyExpr::and(leaf(14548487), PolicyExpr::or(leaf(11), leaf(16))));
    }

    #[test]
    fn single_leaf() {
        assert_eq!(parse_policy("Manufacturer", &dict()).unwrap(), leaf(11));
        assert_eq!(parse_policy("  (( Manufacturer ))", &dict()).unwrap(), leaf(11));
    }

    #[test]
    fn keywords_are_case_insensitive_names_are_not() {
        let p = parse_policy("A AND B Or C", &dict()).unwrap();
        assert_eq!(p, PolicyExpr::or(PolicyExpr::and(leaf(101), leaf(102)), leaf(103)));
        assert_eq!(
            parse_policy("manufacturer", &dict()),
            Err(ParseError::UnknownAttribute { pos: 0, name: "manufacturer".into() })
        );
    }

    #[test]
    fn errors_report_positions() {
        let d = dict();
        assert_eq!(parse_policy("A and", &d).unwrap_err().position(), 5);
        assert_eq!(parse_policy("(A or B", &d).unwrap_err().position(), 7);
        assert_eq!(parse_policy("A B", &d).unwrap_err().position(), 2);
        assert_eq!(parse_policy("A and Z", &d).unwrap_err().position(), 6);
        assert_eq!(parse_policy("A & B", &d).unwrap_err().position(), 2);
        assert_eq!(parse_policy("", &d).unwrap_err().position(), 0);
        assert_eq!(parse_policy(")", &d).unwrap_err().position(), 0);
        assert!(matches!(parse_policy("99999999999999999999", &d), Err(ParseError::Syntax { pos: 0, .. })));
    }

    #[test]
    fn negation_is_rejected() {
        assert_eq!(parse_policy("A and not B", &dict()), Err(ParseError::Negation { pos: 6 }));
        assert_eq!(parse_policy("NOT A", &dict()), Err(ParseError::Negation { pos: 0 }));
        assert_eq!(parse_policy("!A", &dict()), Err(ParseError::Negation { pos: 0 }));
    }

    /// Reference parser: shunting-yard over the same token set, written
    /// independently of the recursive-descent parser above.
    fn shunting_yard(tokens: &[&str]) -> Option<PolicyExpr> {
        fn prec(op: &str) -> u8 {
            if op == "and" {
                2
            } else {
                1
            }
        }
        fn reduce(out: &mut Vec<PolicyExpr>, op: &str) -> Option<()> {
            let r = out.pop()?;
            let l = out.pop()?;
            out.push(if op == "and" { PolicyExpr::and(l, r) } else { PolicyExpr::or(l, r) });
            Some(())
        }
        let mut out: Vec<PolicyExpr> = Vec::new();
        let mut ops: Vec<&str> = Vec::new();
        for &t in tokens {
            match t {
                "and" | "or" => {
                    while let Some(&top) = ops.last() {
                        if top != "(" && prec(top) >= prec(t) {
                            reduce(&mut out, ops.pop()?)?;
                        } else {
                            break;
                        }
                    }
                    ops.push(t);
                }
                "(" => ops.push(t),
                ")" => loop {
                    let top = ops.pop()?;
                    if top == "(" {
                        break;
                    }
                    reduce(&mut out, top)?;
                },
                v => out.push(leaf(v.parse().ok()?)),
            }
        }
        while let Some(op) = ops.pop() {
            if op == "(" {
                return None;
            }
            reduce(&mut out, op)?;
        }
        if out.len() == 1 {
            out.pop()
        } else {
            None
        }
    }

    #[test]
    fn precedence_against_reference() {
        assert_eq!(
            shunting_yard(&["101", "and", "102", "or", "103"]),
            Some(PolicyExpr::or(PolicyExpr::and(leaf(101), leaf(102)), leaf(103)))
        );
        assert_eq!(parse_policy("A and B or C", &dict()).ok(), shunting_yard(&["101", "and", "102", "or", "103"]));
    }

    fn token_stream() -> impl Strategy<Value = Vec<&'static str>> {
        // Well-formed infix streams: operand (op operand)*, with optional groups.
        let operand = prop_oneof![Just(vec!["1"]), Just(vec!["2"]), Just(vec!["3"]), Just(vec!["4"])];
        operand.prop_recursive(4, 32, 4, |inner| {
            prop_oneof![
                (inner.clone(), prop_oneof![Just("and"), Just("or")], inner.clone()).prop_map(|(mut l, op, r)| {
                    l.push(op);
                    l.extend(r);
                    l
                }),
                inner.prop_map(|v| {
                    let mut g = vec!["("];
                    g.extend(v);
                    g.push(")");
                    g
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn agrees_with_shunting_yard(tokens in token_stream()) {
            let text = tokens.join(" ");
            let expected = shunting_yard(&tokens);
            prop_assert!(expected.is_some());
            prop_assert_eq!(parse_policy(&text, &AttributeDictionary::new()).ok(), expected);
        }
    }
}
