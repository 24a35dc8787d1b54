//! Output-property tightening for abstract queries.

use crate::bounds::{output_gap, BoundMethod};
use crate::network::{InputBox, Network, OutputProperty};

/// Raises the threshold by the certified gap between the abstract and the
/// original network over `input`.
///
/// Since `original(x) + d <= abstract(x)` on the box, `abstract(x) <= c + d`
/// everywhere implies `original(x) <= c` everywhere: the tightened abstract
/// query still over-approximates the original one.
pub fn tighten_property(
    abstract_net: &Network,
    original: &Network,
    input: &InputBox,
    property: OutputProperty,
    method: BoundMethod,
) -> OutputProperty {
    let d = output_gap(abstract_net, original, input, method);
    OutputProperty::new(property.threshold + d)
}
