"""Default reference architecture.

Attention condensers concentrated in the early stages, two parallel columns
that interact only at their merge, every downsampling after the stem done by
AADS, and a dual-softmax head.
"""

from __future__ import annotations

from .spec import ArchSpec, parse_arch

REFERENCE_TEMPLATE = """\
# reference attention-condenser defect classifier
input {c}x{h}x{w}
node stem conv k=3,s=2,c=16
node stem_bn bn
node stem_relu relu
node ac0 acond c=8
node ds1 aads f=3
# column a: 3x3 conv path with its own condenser
node a_conv conv k=3,c=16
node a_bn bn
node a_relu relu
node a_ac acond c=8
# column b: wider receptive field plus a residual block
node b_conv conv k=5,c=16
node b_bn bn
node b_relu relu
node b_res resblock
# merge (sum) then downsample
node ds2 aads f=3
node ac2 acond c=8
node c3 conv k=3,c=24
node c3_bn bn
node c3_relu relu
node res3 resblock
node ds3 aads f=3
node ac3 acond c=12
node res4 resblock
node gap gap
node head dualhead c=2
edge input stem
edge stem stem_bn
edge stem_bn stem_relu
edge stem_relu ac0
edge ac0 ds1
edge ds1 a_conv
edge a_conv a_bn
edge a_bn a_relu
edge a_relu a_ac
edge ds1 b_conv
edge b_conv b_bn
edge b_bn b_relu
edge b_relu b_res
edge a_ac ds2
edge b_res ds2
edge ds2 ac2
edge ac2 c3
edge c3 c3_bn
edge c3_bn c3_relu
edge c3_relu res3
edge res3 ds3
edge ds3 ac3
edge ac3 res4
edge res4 gap
edge gap head
column a_conv a_bn a_relu a_ac
column b_conv b_bn b_relu b_res
output head
"""


def reference_source(input_shape=(1, 64, 64)) -> str:
    c, h, w = input_shape
    return REFERENCE_TEMPLATE.format(c=c, h=h, w=w)


def reference_arch(input_shape=(1, 64, 64)) -> ArchSpec:
    return parse_arch(reference_source(input_shape))


def with_maxpool_downsampling(spec: ArchSpec) -> ArchSpec:
    """Same topology with every AADS node swapped for a stride-2 max pool."""
    out = spec.copy()
    for n in out.nodes:
        if n.op == "aads":
            n.op = "maxpool"
            n.params = {"k": 2, "s": 2}
    return out
