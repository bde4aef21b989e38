"""Multiscale spatial reaction-diffusion simulator"""
