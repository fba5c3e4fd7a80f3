"""Plane set dividing the micro-structure cube into material regions.

Each row is (a, b, c, d) for the plane a*x + b*y + c*z - d = 0.  The desk
default uses the first 16 planes; the full 64 are selectable.
"""

import numpy as np

PLANES_64 = np.array([
    (0.8609265, 0.1956651, 0.4695963, 1.748384),
    (0.7195847, 0.5102510, 0.4710009, 2.943090),
    (0.5688037, 0.06691808, 0.8197465, 1.924178),
    (0.1071920, 0.6029550, 0.7905410, 1.271770),
    (0.7416569, 0.2076639, 0.6378250, 2.580966),
    (0.4863807, 0.4607817, 0.7423705, 1.215735),
    (0.2568314, 0.9470659, 0.1926236, 1.424000),
    (0.7151591, 0.3916348, 0.5789384, 1.921521),
    (0.1054744, 0.9844276, 0.1406325, 1.712618),
    (0.6326948, 0.2613305, 0.7289744, 1.181465),
    (0.2716518, 0.9055059, 0.3259821, 1.135105),
    (0.6398444, 0.3745431, 0.6710563, 2.180073),
    (0.5836437, 0.5275241, 0.6173154, 2.052645),
    (0.5684090, 0.1764028, 0.8036127, 1.657721),
    (0.8197048, 0.1024631, 0.5635471, 2.360125),
    (0.1274946, 0.7139698, 0.6884709, 2.370968),
    (0.7305503, 0.1398926, 0.6683758, 0.9220794),
    (0.4882044, 0.5858453, 0.6468708, 0.5461269),
    (0.7241275, 0.5738369, 0.3825579, 2.412523),
    (0.3979635, 0.3684848, 0.8401452, 1.930610),
    (0.8650248, 0.1441708, 0.4805693, 1.795212),
    (0.8572357, 0.4653565, 0.2204320, 1.902939),
    (0.8669178, 0.1284323, 0.4816210, 2.635038),
    (0.1543033, 0.7715167, 0.6172134, 1.961483),
    (0.4793697, 0.7989495, 0.3631589, 1.759905),
    (0.1659080, 0.2156804, 0.9622663, 0.6748800),
    (0.2468854, 0.7715167, 0.5863527, 0.6423204),
    (0.5649452, 0.6013933, 0.5649452, 1.464101),
    (0.4231527, 0.8711968, 0.2489134, 1.657172),
    (0.6388813, 0.5525460, 0.5352789, 1.462725),
    (0.6333450, 0.4446890, 0.6333450, 2.730715),
    (0.2433962, 0.2920754, 0.9249055, 2.773892),
    (0.3298492, 0.7985822, 0.5034540, 2.098559),
    (0.1632993, 0.4082483, 0.8981462, 2.001109),
    (0.5423839, 0.6693248, 0.5077637, 0.9228155),
    (0.6018227, 0.5249942, 0.6018227, 1.695434),
    (0.9093977, 0.3247849, 0.2598279, 2.058806),
    (0.8230470, 0.5534282, 0.1277142, 0.7484869),
    (0.4433384, 0.1313595, 0.8866768, 0.8443746),
    (0.6734445, 0.6884099, 0.2693778, 1.324568),
    (0.2972254, 0.9145396, 0.2743619, 2.464607),
    (0.7218661, 0.3925938, 0.5698943, 2.207026),
    (0.5392394, 0.6564654, 0.5275168, 2.088212),
    (0.3743731, 0.06606583, 0.9249217, 1.333261),
    (0.1427762, 0.1665723, 0.9756376, 0.5186730),
    (0.4939317, 0.2798946, 0.8232196, 1.744109),
    (0.7648147, 0.07114555, 0.6403100, 1.913092),
    (0.8026276, 0.2390806, 0.5464699, 2.138411),
    (0.7220829, 0.6804243, 0.1249759, 1.493591),
    (0.5806682, 0.5806682, 0.5706566, 1.237695),
    (0.8945864, 0.4388537, 0.08439495, 1.095704),
    (0.3212124, 0.4534764, 0.8313734, 1.009433),
    (0.9747546, 0.05415304, 0.2166121, 1.855889),
    (0.5572679, 0.6868651, 0.4665499, 2.181626),
    (0.4943023, 0.8687737, 0.02995771, 0.7418343),
    (0.4652615, 0.6203487, 0.6314263, 1.781062),
    (0.3647265, 0.4103173, 0.8358315, 0.9762100),
    (0.5807795, 0.5915347, 0.5592691, 1.467443),
    (0.9473874, 0.2368468, 0.2153153, 1.995499),
    (0.9486833, 0.3162278, 0.0, 1.061239),
    (0.0, 0.8602915, 0.5098024, 0.3024251),
    (0.9363292, 0.0, 0.3511234, 0.9363292),
    (0.9805807, 0.0, 0.1961161, 1.668649),
    (0.0, 0.1240347, 0.9922779, 0.9292094),
])
