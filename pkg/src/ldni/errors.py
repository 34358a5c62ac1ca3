"""Exception types raised by the kernel.

Every error carries a short machine-friendly ``code`` (the class name) so the
CLI can print a single parsable line.
"""


class LdniError(Exception):
    @property
    def code(self):
        return type(self).__name__


class MeshError(LdniError):
    pass


class EmptyMesh(MeshError):
    pass


class OpenMesh(MeshError):
    pass


class DegenerateHit(LdniError):
    pass


class OnSurface(LdniError):
    pass


class ParityViolation(LdniError):
    def __init__(self, axis, i, j, msg=None):
        self.axis, self.i, self.j = int(axis), int(i), int(j)
        super().__init__(msg or f"odd sample count in column axis={self.axis} i={self.i} j={self.j}")


class OutOfGrid(LdniError):
    pass


class GridMismatch(LdniError):
    pass


class OffsetOverflow(LdniError):
    pass


class ZeroRadius(LdniError):
    pass


class MissingCluster(LdniError):
    pass


class ParseError(LdniError):
    pass


class NonTriangulablePolygon(ParseError):
    pass


class BadMagic(LdniError):
    pass


class VersionUnsupported(LdniError):
    pass


class TruncatedFile(LdniError):
    pass


class DegenerateQuad(LdniError):
    pass
