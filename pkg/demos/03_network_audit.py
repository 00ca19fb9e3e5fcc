"""Architecture audit: layer tables for the reference and reduced networks.

Prints each layer's output shape and parameter count, the way a framework
summary would, and shows that the conv hyperparameters are pinned by the
shape/parameter arithmetic alone.
"""

from cellgrade import nn


def audit(name, net):
    print(f"\n{name}  (input {net.input_shape})")
    print(f"{'layer':<14} {'output shape':<16} {'params':>10}")
    for kind, shape, count in nn.summarize(net):
        print(f"{kind:<14} {str(shape):<16} {count:>10,}")
    total, trainable, non_trainable = nn.count_params(net)
    print(f"{'':14} {'total':<16} {total:>10,}")
    print(f"{'':14} {'trainable':<16} {trainable:>10,}")
    print(f"{'':14} {'non-trainable':<16} {non_trainable:>10,}")


audit("reference_network (the full 64x64 model)", nn.reference_network())
audit("reduced_network (desk-scale 32x32 preset)", nn.reduced_network())

print("\nWhy the first conv must be 3x3 with stride 2:")
print("  params: 64 filters * (kh*kw*3 + 1) = 1792  =>  kh*kw = 9")
print("  shape:  floor((64 - 3) / s) + 1 = 31       =>  s = 2")
print("The same two equations pin every convolution in the table.")
