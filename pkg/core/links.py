"""
连接函数模块
提供 probit、logit、cloglog 三种连接函数 G 的分布函数、分位数、密度及其对数形式
"""

import numpy as np
from scipy import special

from utils.exception_handler import InputError


_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_LOG_HALF = np.log(0.5)


class LinkFunction:
    """
    连接函数 G

    probit 对应 Cohen's d，logit 对应对数优势比，cloglog 对应对数风险比
    """

    SUPPORTED_LINKS = {
        "probit": "标准正态分布",
        "logit": "标准逻辑斯蒂分布",
        "cloglog": "G(z) = 1 − exp(−exp(z))",
    }

    def __init__(self, kind: str = "probit"):
        if kind not in self.SUPPORTED_LINKS:
            raise InputError(f"不支持的连接函数: {kind}，可选: {', '.join(self.SUPPORTED_LINKS)}")
        self.kind = kind

    def __eq__(self, other):
        return isinstance(other, LinkFunction) and other.kind == self.kind

    def __hash__(self):
        return hash(self.kind)

    def __repr__(self):
        return f"LinkFunction({self.kind!r})"

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return special.ndtr(z)
        if self.kind == "logit":
            return special.expit(z)
        return -np.expm1(-np.exp(z))

    def sf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return special.ndtr(-z)
        if self.kind == "logit":
            return special.expit(-z)
        return np.exp(-np.exp(z))

    def logcdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return special.log_ndtr(z)
        if self.kind == "logit":
            return special.log_expit(z)
        with np.errstate(divide="ignore"):
            return np.log(-np.expm1(-np.exp(z)))

    def logsf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return special.log_ndtr(-z)
        if self.kind == "logit":
            return special.log_expit(-z)
        return -np.exp(z)

    def quantile(self, p):
        """分位数函数 G⁻¹"""
        p = np.asarray(p, dtype=float)
        if self.kind == "probit":
            return special.ndtri(p)
        if self.kind == "logit":
            return special.logit(p)
        with np.errstate(divide="ignore"):
            return np.log(-np.log1p(-p))

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return -0.5 * z * z - _LOG_SQRT_2PI
        if self.kind == "logit":
            return special.log_expit(z) + special.log_expit(-z)
        return z - np.exp(z)

    def dlogpdf(self, z):
        """对数密度关于 z 的导数"""
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return -z
        if self.kind == "logit":
            return 1.0 - 2.0 * special.expit(z)
        return 1.0 - np.exp(z)

    def log_prob_interval(self, lo, hi):
        """
        计算 log[G(hi) − G(lo)]，按区间位置在下尾、上尾和跨中位数三种情形中选择稳定公式

        Args:
            lo: 下界（可为 -inf）
            hi: 上界（可为 +inf），要求 lo < hi

        Returns:
            np.ndarray: 区间概率的对数
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lcdf_lo, lcdf_hi = self.logcdf(lo), self.logcdf(hi)
            lsf_lo, lsf_hi = self.logsf(lo), self.logsf(hi)
            # 整个区间位于下半部分
            lower = lcdf_hi + np.log1p(-np.exp(lcdf_lo - lcdf_hi))
            # 整个区间位于上半部分
            upper = lsf_lo + np.log1p(-np.exp(lsf_hi - lsf_lo))
            # 跨过中位数
            middle = np.log1p(-(np.exp(lcdf_lo) + np.exp(lsf_hi)))
            result = np.where(lcdf_hi <= _LOG_HALF, lower,
                              np.where(lsf_lo <= _LOG_HALF, upper, middle))
        return result

    def to_latent(self, u, clamp: float = 8.0):
        """
        计算 Φ⁻¹(G(u))，返回 (z, clamped)

        probit 时直接返回 u；其他连接函数在对数尺度上计算以避免尾部精度损失，
        有限的 u 映射为非有限值时截断到 ±clamp 并标记
        """
        u = np.asarray(u, dtype=float)
        if self.kind == "probit":
            return u, np.zeros(u.shape, dtype=bool)
        with np.errstate(divide="ignore", invalid="ignore"):
            lcdf = self.logcdf(u)
            lsf = self.logsf(u)
            z = np.where(lcdf < lsf, special.ndtri_exp(lcdf), -special.ndtri_exp(lsf))
        clamped = np.isfinite(u) & ~np.isfinite(z)
        if np.any(clamped):
            z = np.where(clamped, np.sign(z) * clamp, z)
        z = np.where(np.isnan(u), np.nan, z)
        return z, clamped

    def from_latent(self, z):
        """to_latent 的反函数：G⁻¹(Φ(z))"""
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return z
        # 上尾用生存函数避免 Φ(z) 舍入为 1
        with np.errstate(divide="ignore"):
            if self.kind == "logit":
                return special.log_ndtr(z) - special.log_ndtr(-z)
            return np.log(-special.log_ndtr(-z))
