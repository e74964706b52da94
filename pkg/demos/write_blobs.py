"""Write the blob dataset used by blobs.cfg, then try: fedfnn run --config demos/blobs.cfg"""

from pathlib import Path

import numpy as np

from fedfnn.datakit import make_blobs

here = Path(__file__).parent
ds = make_blobs(3000, 4, 6, 0.5, seed=0)
np.savetxt(here / "blobs.csv", np.column_stack([ds.X, ds.y.astype(int)]), delimiter=",", fmt="%.10g",
           header="f1,f2,f3,f4,label", comments="")
print(f"wrote {here / 'blobs.csv'}: {ds.N} samples, {ds.D} features, {ds.C} classes")
