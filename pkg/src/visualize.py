import os
from datetime import datetime

import numpy as np
import pandas as pd

from src.analysis import FitResult
from src.correlator import CorrelationTrace

# 归一化残差超过该值的行高亮
PULL_THRESHOLD = 3.0


def summary_items(fit: FitResult):
    """
    汇总框中显示的拟合量

    Args:
        fit (FitResult): 拟合结果

    Returns:
        list: (名称, 数值, 误差, 单位) 元组列表
    """
    return [
        ("Delta t", fit.delta_t, fit.delta_t_err, "fs"),
        ("b", fit.b, fit.b_err, ""),
        ("Visibility", fit.visibility, fit.visibility_err, ""),
        (f"g{fit.order} FWHM", fit.trace_fwhm, fit.trace_fwhm_err, "fs"),
        ("Pulse FWHM", fit.pulse_fwhm, fit.pulse_fwhm_err, "fs"),
        ("Reduced chi2", fit.chi2_reduced, None, ""),
    ]


def create_html_report(fit: FitResult, trace: CorrelationTrace, title: str = "Correlation Fit"):
    """
    创建拟合结果的 HTML 报告

    Args:
        fit (FitResult): 拟合结果
        trace (CorrelationTrace): 被拟合的迹线
        title (str): 页面标题

    Returns:
        str: HTML内容
    """
    df = pd.DataFrame({
        "tau_fs": trace.delays,
        "data": trace.values,
        "sigma": trace.errors if trace.errors is not None else np.nan,
        "model": fit.model(trace.delays),
    })
    df["pull"] = (df["data"] - df["model"]) / df["sigma"]

    html_content = f"""
    <!DOCTYPE html>
    <html>
    <head>
        <title>{title}</title>
        <meta charset="utf-8">
        <meta name="viewport" content="width=device-width, initial-scale=1">
        <style>
            body {{
                font-family: Arial, sans-serif;
                margin: 20px;
                line-height: 1.6;
            }}
            .summary-container {{
                display: flex;
                flex-wrap: wrap;
                justify-content: space-between;
                margin-bottom: 20px;
            }}
            .summary-box {{
                border: 1px solid #ddd;
                border-radius: 5px;
                padding: 15px;
                width: 14%;
                text-align: center;
                margin-bottom: 10px;
            }}
            .summary-box h3 {{
                margin-top: 0;
                color: #333;
            }}
            .summary-box .score {{
                font-size: 20px;
                font-weight: bold;
                color: #2c7be5;
            }}
            .summary-box .error {{
                color: #6c757d;
            }}
            table {{
                width: 100%;
                border-collapse: collapse;
                margin-top: 20px;
            }}
            th, td {{
                border: 1px solid #ddd;
                padding: 8px;
                text-align: right;
                font-size: 12px;
            }}
            th {{
                background-color: #f2f2f2;
            }}
            tr:nth-child(even) {{
                background-color: #f9f9f9;
            }}
            .pull-high {{
                background-color: #f8d7da;
                color: #721c24;
            }}
        </style>
    </head>
    <body>
        <h1>{title}</h1>
        <p>Generated on: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}</p>
        <p>Conversion: {fit.conversion}</p>

        <div class="summary-container">
    """

    # 添加拟合量摘要框
    for name, value, error, unit in summary_items(fit):
        error_text = f'<div class="error">± {error:.3g} {unit}</div>' if error is not None else ""
        html_content += f"""
            <div class="summary-box">
                <h3>{name}</h3>
                <div class="score">{value:.4g} {unit}</div>
                {error_text}
            </div>
        """

    html_content += """
        </div>

        <h2>Data and Model</h2>
        <table>
            <tr>
                <th>Tau (fs)</th>
                <th>Data</th>
                <th>Sigma</th>
                <th>Model</th>
                <th>Pull</th>
            </tr>
    """

    # 添加每一行数据，残差过大的行高亮
    for _, row in df.iterrows():
        css_class = "pull-high" if abs(row["pull"]) > PULL_THRESHOLD else ""
        html_content += f"""
            <tr class="{css_class}">
                <td>{row['tau_fs']:.2f}</td>
                <td>{row['data']:.6g}</td>
                <td>{row['sigma']:.4g}</td>
                <td>{row['model']:.6g}</td>
                <td>{row['pull']:.2f}</td>
            </tr>
        """

    html_content += """
        </table>
    </body>
    </html>
    """

    return html_content


def visualize_fit(fit: FitResult, trace: CorrelationTrace, output_file: str):
    """
    生成并保存拟合报告

    Args:
        fit (FitResult): 拟合结果
        trace (CorrelationTrace): 被拟合的迹线
        output_file (str): 输出文件路径

    Returns:
        str: 输出文件路径
    """
    html_content = create_html_report(fit, trace, title=f"g{fit.order} Envelope Fit")

    # 确保输出目录存在
    os.makedirs(os.path.dirname(os.path.abspath(output_file)), exist_ok=True)

    with open(output_file, 'w', encoding='utf-8') as f:
        f.write(html_content)

    print(f"拟合报告已保存到: {output_file}")
    return output_file
